#pragma once

#include "efanet/backbone.hpp"
#include "efanet/batch.hpp"
#include "efanet/checkpoint.hpp"
#include "efanet/config.hpp"
#include "efanet/cost.hpp"
#include "efanet/data.hpp"
#include "efanet/efa_net.hpp"
#include "efanet/errors.hpp"
#include "efanet/image_io.hpp"
#include "efanet/losses.hpp"
#include "efanet/metrics.hpp"
#include "efanet/optim.hpp"
#include "efanet/params.hpp"
#include "efanet/pipeline.hpp"
#include "efanet/report.hpp"
#include "efanet/tensor.hpp"
