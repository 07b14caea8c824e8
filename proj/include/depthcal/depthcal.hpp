#pragma once

#include "depthcal/dac.hpp"
#include "depthcal/depth_io.hpp"
#include "depthcal/error.hpp"
#include "depthcal/evalkit.hpp"
#include "depthcal/geometry.hpp"
#include "depthcal/gradcheck.hpp"
#include "depthcal/json_util.hpp"
#include "depthcal/numerics.hpp"
#include "depthcal/params.hpp"
#include "depthcal/pipeline.hpp"
#include "depthcal/relation.hpp"
#include "depthcal/rng.hpp"
#include "depthcal/scene_io.hpp"
#include "depthcal/synth.hpp"
