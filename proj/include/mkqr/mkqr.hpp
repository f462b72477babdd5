#pragma once

#include "brisq.hpp"
#include "covariance.hpp"
#include "csv.hpp"
#include "errors.hpp"
#include "intervals.hpp"
#include "linqr.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "score_test.hpp"
#include "select.hpp"
#include "simgen.hpp"
#include "simulate.hpp"
#include "stats.hpp"
