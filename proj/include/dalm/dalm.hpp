#pragma once

#include "dalm/core.hpp"
#include "dalm/linalg.hpp"
#include "dalm/model.hpp"
#include "dalm/subqp.hpp"
#include "dalm/verify.hpp"
#include "dalm/inner_bcd.hpp"
#include "dalm/outer_mm.hpp"
#include "dalm/bench.hpp"
#include "dalm/io.hpp"
#include "dalm/oracles.hpp"
