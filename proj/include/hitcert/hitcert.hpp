#ifndef HITCERT_HITCERT_HPP
#define HITCERT_HITCERT_HPP

// Certified shortlists from generated candidate batches: weighted
// multi-sample conformal p-values, nested testing, density-ratio weights,
// robustness diagnostics, budget allocation, and a synthetic Monte Carlo
// harness with known ground truth.

#include "baselines.hpp"
#include "budget.hpp"
#include "core.hpp"
#include "csv.hpp"
#include "diagnostics.hpp"
#include "nested.hpp"
#include "parallel.hpp"
#include "pvalue.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "scores.hpp"
#include "sim.hpp"
#include "weights.hpp"

#endif // HITCERT_HITCERT_HPP
