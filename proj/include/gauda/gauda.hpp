#pragma once
// Umbrella header: the whole library.

#include "gauda/autoencoder.hpp"
#include "gauda/data.hpp"
#include "gauda/diffusion.hpp"
#include "gauda/ensemble.hpp"
#include "gauda/experiments.hpp"
#include "gauda/generative.hpp"
#include "gauda/grad_check.hpp"
#include "gauda/log.hpp"
#include "gauda/losses.hpp"
#include "gauda/metrics.hpp"
#include "gauda/nn.hpp"
#include "gauda/rng.hpp"
#include "gauda/sample.hpp"
#include "gauda/sampling.hpp"
#include "gauda/serialize.hpp"
#include "gauda/tape.hpp"
#include "gauda/tensor.hpp"
#include "gauda/trainer.hpp"
