#include "tba/adam.hpp"

namespace tba {

void adam_step(Tensor& params, const Tensor& grads, AdamState& state) {
  if (params.shape() != grads.shape() || params.shape() != state.m.shape()) {
    throw DimensionError("adam_step: params " + shape_str(params.shape()) + ", grads " +
                         shape_str(grads.shape()) + ", state " + shape_str(state.m.shape()));
  }
  if (!(state.config.lr > 0.0)) throw ArgumentError("adam_step: learning rate must be positive");
  ++state.step;
  adam_update<float>(params.values(), grads.values(), state.m.values(), state.v.values(),
                     state.step, state.config);
}

}  // namespace tba
