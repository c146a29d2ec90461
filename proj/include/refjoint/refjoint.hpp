#pragma once

#include "refjoint/error.hpp"
#include "refjoint/estimator.hpp"
#include "refjoint/inference.hpp"
#include "refjoint/io.hpp"
#include "refjoint/linalg.hpp"
#include "refjoint/normal.hpp"
#include "refjoint/psat.hpp"
#include "refjoint/rng.hpp"
#include "refjoint/simulate.hpp"
#include "refjoint/varcorrect.hpp"
