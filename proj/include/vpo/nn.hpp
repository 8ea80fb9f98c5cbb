#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vpo::nn {

enum class Activation { linear, tanh, silu };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

// One dense layer; weights are row-major [out][in].
struct Layer {
  int out = 0;
  int in = 0;
  std::vector<double> w;
  std::vector<double> b;
  Activation act = Activation::linear;
};

struct DenseNet {
  std::vector<Layer> layers;

  int input_width() const { return layers.empty() ? 0 : layers.front().in; }
  int output_width() const { return layers.empty() ? 0 : layers.back().out; }
  std::size_t param_count() const;
};

// widths = {in, h1, ..., out}; acts has one entry per layer.
// Weights are U[-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
DenseNet make_dense_net(const std::vector<int>& widths,
                        const std::vector<Activation>& acts, uint64_t seed);

// Cached intermediates from one forward pass; required input to backward().
struct ForwardTrace {
  bool valid = false;
  std::vector<double> input;
  std::vector<std::vector<double>> preact;
  std::vector<std::vector<double>> act;
};

// Pure when trace == nullptr; otherwise fills the trace for backward().
std::vector<double> forward(const DenseNet& net, std::span<const double> input,
                            ForwardTrace* trace = nullptr);

// Per-parameter gradient buffers mirroring the net's shapes. Gradients
// accumulate (sum) across backward calls until clear() or adam_step.
struct GradientTape {
  struct LayerGrad {
    std::vector<double> dw;
    std::vector<double> db;
  };
  std::vector<LayerGrad> layers;
  int accum_count = 0;

  void clear();
};

GradientTape make_tape(const DenseNet& net);

// Accumulates d(upstream . output)/d(params) into the tape.
// Throws StateError if the trace is not a valid cached forward pass.
void backward(const DenseNet& net, const ForwardTrace& trace,
              std::span<const double> upstream, GradientTape& tape);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  std::vector<GradientTape::LayerGrad> m;
  std::vector<GradientTape::LayerGrad> v;
  long step = 0;
};

AdamState make_adam(const DenseNet& net, const AdamConfig& cfg = {});

// One Adam update from the accumulated tape; increments the step counter and
// zeroes the tape. Non-finite gradients raise NumericError with the location.
void adam_step(DenseNet& net, GradientTape& tape, AdamState& state);

// Deep, storage-independent snapshot of the parameters.
DenseNet clone_params(const DenseNet& net);

bool params_equal(const DenseNet& a, const DenseNet& b);

// Versioned text checkpoint: layer shapes plus row-major values, printed with
// enough digits to round-trip doubles exactly.
void save_checkpoint(const DenseNet& net, const std::string& path);
DenseNet load_checkpoint(const std::string& path);

}  // namespace vpo::nn
