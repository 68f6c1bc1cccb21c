#pragma once

#include "bdce/checkpoint.hpp"
#include "bdce/config.hpp"
#include "bdce/curve.hpp"
#include "bdce/diffusion.hpp"
#include "bdce/error.hpp"
#include "bdce/grad_check.hpp"
#include "bdce/image.hpp"
#include "bdce/layers.hpp"
#include "bdce/losses.hpp"
#include "bdce/metrics.hpp"
#include "bdce/models.hpp"
#include "bdce/params.hpp"
#include "bdce/pipeline.hpp"
#include "bdce/png_io.hpp"
#include "bdce/resample.hpp"
#include "bdce/rng.hpp"
#include "bdce/selfcheck.hpp"
#include "bdce/synth.hpp"
#include "bdce/tensor.hpp"
