#pragma once

#include "ivbandit/errors.hpp"
#include "ivbandit/rng.hpp"
#include "ivbandit/stats.hpp"
#include "ivbandit/dgp.hpp"
#include "ivbandit/estimation.hpp"
#include "ivbandit/inference.hpp"
#include "ivbandit/policy.hpp"
#include "ivbandit/selfbias.hpp"
#include "ivbandit/harness.hpp"
