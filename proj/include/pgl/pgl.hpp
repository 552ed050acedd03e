#pragma once

#include "pgl/error.hpp"
#include "pgl/tensor.hpp"
#include "pgl/ops.hpp"
#include "pgl/layers.hpp"
#include "pgl/decoupled_net.hpp"
#include "pgl/schedule.hpp"
#include "pgl/optim.hpp"
#include "pgl/data.hpp"
#include "pgl/trainer.hpp"
#include "pgl/memory_model.hpp"
#include "pgl/checkpoint.hpp"
#include "pgl/config.hpp"
#include "pgl/metrics_io.hpp"
#include "pgl/gradcheck.hpp"
#include "pgl/commands.hpp"
