#pragma once

#include "ldbranch/analytic.hpp"
#include "ldbranch/config.hpp"
#include "ldbranch/experiments.hpp"
#include "ldbranch/io.hpp"
#include "ldbranch/numeric.hpp"
#include "ldbranch/params.hpp"
#include "ldbranch/ratefn.hpp"
#include "ldbranch/rng.hpp"
#include "ldbranch/simulate.hpp"
