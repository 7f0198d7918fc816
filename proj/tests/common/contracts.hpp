#pragma once

#include <cstdint>

#include "common/oracles.hpp"

namespace salience::testing {

/// Fixed-seed instances on the tiny config, cycling through the adapting
/// variants. Per instance: group checksums before/after each of the three
/// steps, L_C / L_D monotonicity at lr 1e-4, and the confuse update equal
/// to the negated descent update on the same batch.
SuiteResult update_contract_suite(std::size_t instances, std::uint64_t seed);

}  // namespace salience::testing
