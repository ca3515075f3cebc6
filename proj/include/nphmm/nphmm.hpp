#pragma once

#include "nphmm/emissions.hpp"
#include "nphmm/error.hpp"
#include "nphmm/experiments.hpp"
#include "nphmm/hmm.hpp"
#include "nphmm/inference.hpp"
#include "nphmm/metrics.hpp"
#include "nphmm/priors.hpp"
#include "nphmm/random.hpp"
