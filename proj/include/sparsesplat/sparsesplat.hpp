#pragma once

#include "binary_io.hpp"
#include "colmap.hpp"
#include "config.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "formats.hpp"
#include "image.hpp"
#include "losses.hpp"
#include "math.hpp"
#include "metrics.hpp"
#include "pipeline.hpp"
#include "png_io.hpp"
#include "prior_protocol.hpp"
#include "priors.hpp"
#include "rasterizer.hpp"
#include "scene_model.hpp"
#include "side_views.hpp"
#include "split.hpp"
#include "synth.hpp"
#include "toy_extractor.hpp"
#include "trainer.hpp"
