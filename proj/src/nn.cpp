#include "vpo/nn.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "vpo/errors.hpp"
#include "vpo/rng.hpp"
#include "vpo/textio.hpp"

namespace vpo::nn {

namespace {

double apply_act(Activation a, double z) {
  switch (a) {
    case Activation::linear:
      return z;
    case Activation::tanh:
      return std::tanh(z);
    case Activation::silu:
      return z / (1.0 + std::exp(-z));
  }
  return z;
}

double act_derivative(Activation a, double z) {
  switch (a) {
    case Activation::linear:
      return 1.0;
    case Activation::tanh: {
      double th = std::tanh(z);
      return 1.0 - th * th;
    }
    case Activation::silu: {
      double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1.0 + z * (1.0 - s));
    }
  }
  return 1.0;
}

void check_same_shape(const DenseNet& net, const GradientTape& tape) {
  if (tape.layers.size() != net.layers.size()) {
    throw ShapeError("tape/net layer count mismatch");
  }
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (tape.layers[l].dw.size() != net.layers[l].w.size() ||
        tape.layers[l].db.size() != net.layers[l].b.size()) {
      throw ShapeError("tape/net shape mismatch at layer " + std::to_string(l));
    }
  }
}

}  // namespace

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::linear:
      return "linear";
    case Activation::tanh:
      return "tanh";
    case Activation::silu:
      return "silu";
  }
  return "linear";
}

Activation parse_activation(const std::string& name) {
  if (name == "linear") return Activation::linear;
  if (name == "tanh") return Activation::tanh;
  if (name == "silu") return Activation::silu;
  throw ConfigError("unknown activation: " + name);
}

std::size_t DenseNet::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.w.size() + l.b.size();
  return n;
}

DenseNet make_dense_net(const std::vector<int>& widths,
                        const std::vector<Activation>& acts, uint64_t seed) {
  if (widths.size() < 2) throw ConfigError("need at least input and output widths");
  if (acts.size() != widths.size() - 1) {
    throw ConfigError("need one activation per layer");
  }
  for (int w : widths) {
    if (w < 1) throw ConfigError("layer widths must be positive");
  }
  Rng rng(seed);
  DenseNet net;
  net.layers.resize(widths.size() - 1);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Layer& layer = net.layers[l];
    layer.in = widths[l];
    layer.out = widths[l + 1];
    layer.act = acts[l];
    layer.w.resize(static_cast<std::size_t>(layer.out) * layer.in);
    layer.b.assign(static_cast<std::size_t>(layer.out), 0.0);
    double scale = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (double& w : layer.w) w = rng.uniform(-scale, scale);
  }
  return net;
}

std::vector<double> forward(const DenseNet& net, std::span<const double> input,
                            ForwardTrace* trace) {
  if (net.layers.empty()) throw StateError("forward on empty network");
  if (static_cast<int>(input.size()) != net.input_width()) {
    throw ShapeError("input width " + std::to_string(input.size()) +
                     " != network input width " +
                     std::to_string(net.input_width()));
  }
  if (trace) {
    trace->valid = false;
    trace->input.assign(input.begin(), input.end());
    trace->preact.assign(net.layers.size(), {});
    trace->act.assign(net.layers.size(), {});
  }
  std::vector<double> cur(input.begin(), input.end());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Layer& layer = net.layers[l];
    std::vector<double> z(static_cast<std::size_t>(layer.out));
    for (int i = 0; i < layer.out; ++i) {
      double acc = layer.b[static_cast<std::size_t>(i)];
      const double* row = &layer.w[static_cast<std::size_t>(i) * layer.in];
      for (int j = 0; j < layer.in; ++j) acc += row[j] * cur[static_cast<std::size_t>(j)];
      z[static_cast<std::size_t>(i)] = acc;
    }
    std::vector<double> a(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) a[i] = apply_act(layer.act, z[i]);
    if (trace) {
      trace->preact[l] = z;
      trace->act[l] = a;
    }
    cur = std::move(a);
  }
  if (trace) trace->valid = true;
  return cur;
}

void GradientTape::clear() {
  for (auto& l : layers) {
    std::fill(l.dw.begin(), l.dw.end(), 0.0);
    std::fill(l.db.begin(), l.db.end(), 0.0);
  }
  accum_count = 0;
}

GradientTape make_tape(const DenseNet& net) {
  GradientTape tape;
  tape.layers.resize(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    tape.layers[l].dw.assign(net.layers[l].w.size(), 0.0);
    tape.layers[l].db.assign(net.layers[l].b.size(), 0.0);
  }
  return tape;
}

void backward(const DenseNet& net, const ForwardTrace& trace,
              std::span<const double> upstream, GradientTape& tape) {
  if (!trace.valid || trace.preact.size() != net.layers.size()) {
    throw StateError("backward without a cached forward pass");
  }
  if (static_cast<int>(trace.input.size()) != net.input_width()) {
    throw StateError("cached trace does not match this network");
  }
  if (static_cast<int>(upstream.size()) != net.output_width()) {
    throw ShapeError("upstream width != network output width");
  }
  check_same_shape(net, tape);

  std::vector<double> g(upstream.begin(), upstream.end());
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const Layer& layer = net.layers[li];
    const std::vector<double>& z = trace.preact[li];
    const std::vector<double>& a_prev =
        li == 0 ? trace.input : trace.act[li - 1];
    std::vector<double> dz(static_cast<std::size_t>(layer.out));
    for (int i = 0; i < layer.out; ++i) {
      dz[static_cast<std::size_t>(i)] =
          g[static_cast<std::size_t>(i)] *
          act_derivative(layer.act, z[static_cast<std::size_t>(i)]);
    }
    GradientTape::LayerGrad& lg = tape.layers[li];
    for (int i = 0; i < layer.out; ++i) {
      double di = dz[static_cast<std::size_t>(i)];
      double* dwrow = &lg.dw[static_cast<std::size_t>(i) * layer.in];
      for (int j = 0; j < layer.in; ++j) dwrow[j] += di * a_prev[static_cast<std::size_t>(j)];
      lg.db[static_cast<std::size_t>(i)] += di;
    }
    if (li > 0) {
      std::vector<double> gprev(static_cast<std::size_t>(layer.in), 0.0);
      for (int i = 0; i < layer.out; ++i) {
        double di = dz[static_cast<std::size_t>(i)];
        const double* row = &layer.w[static_cast<std::size_t>(i) * layer.in];
        for (int j = 0; j < layer.in; ++j) gprev[static_cast<std::size_t>(j)] += row[j] * di;
      }
      g = std::move(gprev);
    }
  }
  tape.accum_count += 1;
}

AdamState make_adam(const DenseNet& net, const AdamConfig& cfg) {
  AdamState st;
  st.cfg = cfg;
  st.m.resize(net.layers.size());
  st.v.resize(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    st.m[l].dw.assign(net.layers[l].w.size(), 0.0);
    st.m[l].db.assign(net.layers[l].b.size(), 0.0);
    st.v[l].dw.assign(net.layers[l].w.size(), 0.0);
    st.v[l].db.assign(net.layers[l].b.size(), 0.0);
  }
  return st;
}

void adam_step(DenseNet& net, GradientTape& tape, AdamState& state) {
  check_same_shape(net, tape);
  if (state.m.size() != net.layers.size()) {
    throw ShapeError("adam state does not match this network");
  }
  if (tape.accum_count == 0) {
    throw StateError("adam_step on an empty tape");
  }
  for (std::size_t l = 0; l < tape.layers.size(); ++l) {
    for (double gv : tape.layers[l].dw) {
      if (!std::isfinite(gv)) {
        throw NumericError("non-finite weight gradient at layer " + std::to_string(l));
      }
    }
    for (double gv : tape.layers[l].db) {
      if (!std::isfinite(gv)) {
        throw NumericError("non-finite bias gradient at layer " + std::to_string(l));
      }
    }
  }

  state.step += 1;
  const AdamConfig& c = state.cfg;
  double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  auto update = [&](double& p, double& m, double& v, double g) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    double mhat = m / bc1;
    double vhat = v / bc2;
    p -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Layer& layer = net.layers[l];
    GradientTape::LayerGrad& lg = tape.layers[l];
    for (std::size_t i = 0; i < layer.w.size(); ++i) {
      update(layer.w[i], state.m[l].dw[i], state.v[l].dw[i], lg.dw[i]);
    }
    for (std::size_t i = 0; i < layer.b.size(); ++i) {
      update(layer.b[i], state.m[l].db[i], state.v[l].db[i], lg.db[i]);
    }
  }
  tape.clear();
}

DenseNet clone_params(const DenseNet& net) { return net; }

bool params_equal(const DenseNet& a, const DenseNet& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (a.layers[l].in != b.layers[l].in || a.layers[l].out != b.layers[l].out ||
        a.layers[l].act != b.layers[l].act || a.layers[l].w != b.layers[l].w ||
        a.layers[l].b != b.layers[l].b) {
      return false;
    }
  }
  return true;
}

void save_checkpoint(const DenseNet& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open checkpoint for writing: " + path);
  out << "vpo-densenet 1\n";
  out << "layers " << net.layers.size() << "\n";
  for (const Layer& l : net.layers) {
    out << "layer " << l.out << " " << l.in << " " << activation_name(l.act) << "\n";
    out << "w";
    for (double v : l.w) out << " " << textio::fmt(v);
    out << "\nb";
    for (double v : l.b) out << " " << textio::fmt(v);
    out << "\n";
  }
}

DenseNet load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "vpo-densenet" || version != 1) {
    throw ConfigError("unrecognized checkpoint header in " + path);
  }
  std::string tok;
  std::size_t count = 0;
  in >> tok >> count;
  if (tok != "layers") throw ConfigError("malformed checkpoint: " + path);
  DenseNet net;
  net.layers.resize(count);
  for (std::size_t li = 0; li < count; ++li) {
    Layer& l = net.layers[li];
    std::string act;
    in >> tok >> l.out >> l.in >> act;
    if (tok != "layer" || l.out < 1 || l.in < 1) {
      throw ConfigError("malformed layer header in " + path);
    }
    l.act = parse_activation(act);
    in >> tok;
    if (tok != "w") throw ConfigError("malformed checkpoint: " + path);
    l.w.resize(static_cast<std::size_t>(l.out) * l.in);
    for (double& v : l.w) {
      in >> tok;
      v = textio::parse_double(tok);
    }
    in >> tok;
    if (tok != "b") throw ConfigError("malformed checkpoint: " + path);
    l.b.resize(static_cast<std::size_t>(l.out));
    for (double& v : l.b) {
      in >> tok;
      v = textio::parse_double(tok);
    }
  }
  if (!in) throw ConfigError("truncated checkpoint: " + path);
  for (std::size_t li = 0; li + 1 < net.layers.size(); ++li) {
    if (net.layers[li].out != net.layers[li + 1].in) {
      throw ConfigError("checkpoint layer widths do not chain: " + path);
    }
  }
  return net;
}

}  // namespace vpo::nn
