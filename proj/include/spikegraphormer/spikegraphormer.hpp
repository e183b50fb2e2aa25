#pragma once

#include "spikegraphormer/autograd.hpp"
#include "spikegraphormer/bench.hpp"
#include "spikegraphormer/checkpoint.hpp"
#include "spikegraphormer/config.hpp"
#include "spikegraphormer/data.hpp"
#include "spikegraphormer/errors.hpp"
#include "spikegraphormer/gcn.hpp"
#include "spikegraphormer/layers.hpp"
#include "spikegraphormer/lif.hpp"
#include "spikegraphormer/loss.hpp"
#include "spikegraphormer/memory.hpp"
#include "spikegraphormer/metrics.hpp"
#include "spikegraphormer/model.hpp"
#include "spikegraphormer/optim.hpp"
#include "spikegraphormer/rng.hpp"
#include "spikegraphormer/sga.hpp"
#include "spikegraphormer/tensor.hpp"
#include "spikegraphormer/trainer.hpp"
