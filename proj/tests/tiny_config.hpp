#pragma once

// A configuration small enough for a full run in a few seconds.

#include "coda/coda.hpp"

inline coda::TrainConfig tiny_config() {
  coda::TrainConfig c;
  c.world.num_train_scenes = 6;
  c.world.num_val_scenes = 3;
  c.world.points_per_scene = 600;
  c.detector.num_queries = 24;
  c.detector.k_neighbors = 8;
  c.detector.point_hidden = 8;
  c.detector.point_out = 8;
  c.detector.trunk = 16;
  c.detector.feature_dim = 16;
  c.encoder.dim = 16;
  c.alignment.extra_queries = 4;
  c.stage_a_epochs = 4;
  c.stage_b_epochs = 4;
  c.eval_every = 2;
  c.batch_size = 2;
  c.discovery.update_period_epochs = 2;
  c.discovery.objectness_threshold = 0.05;
  return c;
}
