#pragma once

// Small scene and training setup so trainer, encoder and evaluation tests
// run in seconds.

#include "nvv/eval.hpp"
#include "nvv/scene_oracle.hpp"
#include "nvv/trainer.hpp"

namespace nvv::test {

inline TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.layout.coef_dims = {6, 6, 6};
  cfg.layout.basis_dims = {{6, 6, 6}, {8, 8, 8}};
  cfg.layout.basis_freqs = {2, 4};
  cfg.layout.basis_channels = 2;
  cfg.layout.mlp_hidden = {16, 16};
  cfg.layout.dir_octaves = 1;
  cfg.iframe_iters = 60;
  cfg.pframe_iters = 20;
  cfg.rays_per_batch = 128;
  cfg.samples_per_ray = 12;
  cfg.lr_laplace = 1e-2;
  return cfg;
}

inline Dataset tiny_dataset(int frames, int views = 6, int res = 12, const BlobScene* scene = nullptr) {
  const BlobScene s = scene ? *scene : acceptance_scene(frames);
  return synthesize(s, camera_rig(views, res, res), 32, 2);
}

}  // namespace nvv::test
