#pragma once

#include "lts/checkpoint.hpp"
#include "lts/corpus.hpp"
#include "lts/error.hpp"
#include "lts/inference.hpp"
#include "lts/metrics.hpp"
#include "lts/model.hpp"
#include "lts/ndcore.hpp"
#include "lts/synth.hpp"
#include "lts/training.hpp"
