// Small portico datasets and networks shared by the training tests.
#pragma once

#include "beamvem/dataset.hpp"
#include "beamvem/training.hpp"

namespace testing {

inline beamvem::PorticoConfig small_portico(int elems = 2, int order = 4) {
  beamvem::PorticoConfig c;
  c.mesh = {elems, order};
  return c;
}

inline beamvem::nn::Architecture small_architecture() {
  beamvem::nn::Architecture a;
  a.node_layers = {6, 5};
  a.material_layers = {4};
  a.head_layers = {7, 6};
  return a;
}

inline beamvem::TrainingConfig small_training_config(int epochs = 5) {
  beamvem::TrainingConfig c;
  c.epochs = epochs;
  c.seed = 11;
  c.architecture = small_architecture();
  return c;
}

}  // namespace testing
