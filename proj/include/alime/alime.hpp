#pragma once

#include "alime/dataset.hpp"
#include "alime/error.hpp"
#include "alime/eval.hpp"
#include "alime/explain.hpp"
#include "alime/neuralnet.hpp"
#include "alime/rng.hpp"
#include "alime/sampler.hpp"
#include "alime/surrogate.hpp"
#include "alime/types.hpp"
