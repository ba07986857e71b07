#pragma once

#include "nmix/alpha_solver.hpp"
#include "nmix/baselines.hpp"
#include "nmix/cv.hpp"
#include "nmix/factor_solver.hpp"
#include "nmix/fitter.hpp"
#include "nmix/io.hpp"
#include "nmix/likelihood.hpp"
#include "nmix/metrics.hpp"
#include "nmix/random.hpp"
#include "nmix/synthgen.hpp"
#include "nmix/types.hpp"
