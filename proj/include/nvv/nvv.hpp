#pragma once

#include "nvv/bitstream.hpp"
#include "nvv/codec.hpp"
#include "nvv/config.hpp"
#include "nvv/encoder.hpp"
#include "nvv/eval.hpp"
#include "nvv/field_set.hpp"
#include "nvv/grid_field.hpp"
#include "nvv/optim.hpp"
#include "nvv/radiance_model.hpp"
#include "nvv/rate_model.hpp"
#include "nvv/scene_oracle.hpp"
#include "nvv/trainer.hpp"
#include "nvv/volume_renderer.hpp"
