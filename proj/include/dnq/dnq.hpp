// Umbrella header for the whole toolkit.
#pragma once

#include "dnq/checkpoint.hpp"
#include "dnq/codec.hpp"
#include "dnq/common.hpp"
#include "dnq/config.hpp"
#include "dnq/controller.hpp"
#include "dnq/dataset.hpp"
#include "dnq/kmeans.hpp"
#include "dnq/network.hpp"
#include "dnq/pipeline.hpp"
#include "dnq/policy.hpp"
#include "dnq/quantizer.hpp"
#include "dnq/tensor.hpp"
