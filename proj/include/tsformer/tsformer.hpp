#pragma once

// Umbrella header for the tsformer engine.

#include "tensor.hpp"
#include "fft.hpp"
#include "autodiff.hpp"
#include "nn_ops.hpp"
#include "optimizer.hpp"
#include "flops.hpp"
#include "metrics.hpp"
#include "rmt.hpp"
#include "attention.hpp"
#include "model.hpp"
#include "checkpoint.hpp"
#include "gradcheck.hpp"
#include "image_io.hpp"
#include "config.hpp"
#include "pipeline.hpp"
