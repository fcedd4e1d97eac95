#pragma once

// Umbrella header.

#include "tpm/core.hpp"
#include "tpm/episode.hpp"
#include "tpm/metrics.hpp"
#include "tpm/posterior.hpp"
#include "tpm/prototype.hpp"
#include "tpm/synth.hpp"
#include "tpm/threshold.hpp"
