#pragma once

// Umbrella header.

#include "switokd/checkpoint.hpp"
#include "switokd/commands.hpp"
#include "switokd/config.hpp"
#include "switokd/data.hpp"
#include "switokd/distill.hpp"
#include "switokd/error.hpp"
#include "switokd/gap.hpp"
#include "switokd/grad_check.hpp"
#include "switokd/metrics.hpp"
#include "switokd/nn.hpp"
#include "switokd/optimizer.hpp"
#include "switokd/trainer.hpp"
