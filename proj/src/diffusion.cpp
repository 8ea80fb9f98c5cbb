#include "vpo/diffusion.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>

#include "vpo/errors.hpp"
#include "vpo/textio.hpp"

namespace vpo::diffusion {

namespace {

std::atomic<uint64_t> g_sampler_calls{0};

void check_timestep(int t, const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.timesteps()) {
    throw std::out_of_range("timestep " + std::to_string(t) +
                            " outside [0, " + std::to_string(sched.timesteps()) + ")");
  }
}

// One ancestral update from timestep t to t_prev (t_prev = -1 means the final
// hop to x0, where the posterior variance vanishes).
void ancestral_update(const Denoiser& d, std::vector<double>& x, int t,
                      int t_prev, int condition, const NoiseSchedule& sched,
                      Rng& rng) {
  std::vector<double> eps = predict_noise(d, x, t, condition);
  double ab_t = sched.alpha_bar[static_cast<std::size_t>(t)];
  double ab_p = t_prev >= 0 ? sched.alpha_bar[static_cast<std::size_t>(t_prev)] : 1.0;
  double a_eff = ab_t / ab_p;
  double b_eff = 1.0 - a_eff;
  double denom = 1.0 - ab_t;
  double coef_x0 = std::sqrt(ab_p) * b_eff / denom;
  double coef_xt = std::sqrt(a_eff) * (1.0 - ab_p) / denom;
  double var = b_eff * (1.0 - ab_p) / denom;
  double sq_ab = std::sqrt(ab_t);
  double sq_1mab = std::sqrt(1.0 - ab_t);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double x0_hat = (x[i] - sq_1mab * eps[i]) / sq_ab;
    x[i] = coef_x0 * x0_hat + coef_xt * x[i];
  }
  if (t_prev >= 0) {
    double sd = std::sqrt(var);
    for (double& v : x) v += sd * rng.normal();
  }
}

}  // namespace

NoiseSchedule make_schedule(int timesteps, double beta_start, double beta_end) {
  if (timesteps < 2) throw ConfigError("schedule needs at least 2 timesteps");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("betas must satisfy 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.beta.resize(static_cast<std::size_t>(timesteps));
  s.alpha.resize(s.beta.size());
  s.alpha_bar.resize(s.beta.size());
  double prod = 1.0;
  for (int t = 0; t < timesteps; ++t) {
    double b = beta_start + (beta_end - beta_start) * static_cast<double>(t) /
                                static_cast<double>(timesteps - 1);
    s.beta[static_cast<std::size_t>(t)] = b;
    s.alpha[static_cast<std::size_t>(t)] = 1.0 - b;
    prod *= 1.0 - b;
    s.alpha_bar[static_cast<std::size_t>(t)] = prod;
  }
  return s;
}

Trajectory make_trajectory(int frames, int dims, int condition) {
  if (frames < 3) throw ShapeError("trajectories need at least 3 frames");
  if (dims < 1) throw ShapeError("trajectories need at least 1 dim");
  Trajectory y;
  y.frames = frames;
  y.dims = dims;
  y.condition = condition;
  y.values.assign(static_cast<std::size_t>(frames) * dims, 0.0);
  return y;
}

Trajectory forward_diffuse(const Trajectory& x0, int t,
                           std::span<const double> noise,
                           const NoiseSchedule& sched) {
  check_timestep(t, sched);
  if (noise.size() != x0.values.size()) {
    throw ShapeError("noise shape does not match trajectory");
  }
  double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
  double sq_ab = std::sqrt(ab);
  double sq_1mab = std::sqrt(1.0 - ab);
  Trajectory out = x0;
  out.seed.reset();
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = sq_ab * x0.values[i] + sq_1mab * noise[i];
  }
  return out;
}

Denoiser make_denoiser(int frames, int dims, int num_classes,
                       const std::vector<int>& hidden, int t_embed_width,
                       uint64_t seed) {
  if (frames < 3 || dims < 1) throw ConfigError("bad trajectory shape");
  if (num_classes < 1) throw ConfigError("need at least one class");
  if (t_embed_width < 2 || t_embed_width % 2 != 0) {
    throw ConfigError("timestep embedding width must be even and >= 2");
  }
  Denoiser d;
  d.frames = frames;
  d.dims = dims;
  d.t_embed_width = t_embed_width;
  d.num_classes = num_classes;
  std::vector<int> widths;
  widths.push_back(frames * dims + t_embed_width + num_classes);
  for (int h : hidden) widths.push_back(h);
  widths.push_back(frames * dims);
  std::vector<nn::Activation> acts(widths.size() - 1, nn::Activation::silu);
  acts.back() = nn::Activation::linear;
  d.net = nn::make_dense_net(widths, acts, seed);
  return d;
}

std::vector<double> time_embedding(int t, int width) {
  std::vector<double> emb(static_cast<std::size_t>(width));
  int half = width / 2;
  for (int i = 0; i < half; ++i) {
    double freq = std::pow(10000.0, -static_cast<double>(i) / half);
    emb[static_cast<std::size_t>(2 * i)] = std::sin(t * freq);
    emb[static_cast<std::size_t>(2 * i + 1)] = std::cos(t * freq);
  }
  return emb;
}

std::vector<double> denoiser_input(const Denoiser& d,
                                   std::span<const double> x_t, int t,
                                   int condition) {
  if (static_cast<int>(x_t.size()) != d.frame_values()) {
    throw ShapeError("x_t size does not match denoiser frames*dims");
  }
  if (condition < 0 || condition >= d.num_classes) {
    throw std::out_of_range("condition " + std::to_string(condition) +
                            " outside [0, " + std::to_string(d.num_classes) + ")");
  }
  std::vector<double> in;
  in.reserve(x_t.size() + static_cast<std::size_t>(d.t_embed_width + d.num_classes));
  in.insert(in.end(), x_t.begin(), x_t.end());
  std::vector<double> emb = time_embedding(t, d.t_embed_width);
  in.insert(in.end(), emb.begin(), emb.end());
  for (int c = 0; c < d.num_classes; ++c) in.push_back(c == condition ? 1.0 : 0.0);
  return in;
}

std::vector<double> predict_noise(const Denoiser& d, std::span<const double> x_t,
                                  int t, int condition, nn::ForwardTrace* trace) {
  std::vector<double> in = denoiser_input(d, x_t, t, condition);
  return nn::forward(d.net, in, trace);
}

Trajectory predict_x0(const Denoiser& d, const Trajectory& x_t, int t,
                      int condition, const NoiseSchedule& sched) {
  check_timestep(t, sched);
  if (x_t.frames != d.frames || x_t.dims != d.dims) {
    throw ShapeError("trajectory shape does not match denoiser");
  }
  double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
  if (ab < 1e-12) {
    throw NumericError("alpha_bar below 1e-12 at t=" + std::to_string(t) +
                       "; x0 prediction would be ill-conditioned");
  }
  std::vector<double> eps = predict_noise(d, x_t.values, t, condition);
  Trajectory out = make_trajectory(d.frames, d.dims, condition);
  double sq_ab = std::sqrt(ab);
  double sq_1mab = std::sqrt(1.0 - ab);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = (x_t.values[i] - sq_1mab * eps[i]) / sq_ab;
  }
  return out;
}

std::vector<int> strided_timesteps(int timesteps, int steps) {
  if (steps < 1 || steps > timesteps) {
    throw ConfigError("sampler steps must lie in [1, timesteps]");
  }
  std::vector<int> ts;
  if (steps == 1) {
    ts.push_back(timesteps - 1);
    return ts;
  }
  for (int i = 0; i < steps; ++i) {
    double pos = static_cast<double>(timesteps - 1) *
                 (1.0 - static_cast<double>(i) / (steps - 1));
    int t = static_cast<int>(std::lround(pos));
    if (ts.empty() || ts.back() != t) ts.push_back(t);
  }
  return ts;
}

Trajectory sample(const Denoiser& d, int condition, const NoiseSchedule& sched,
                  int steps, Rng& rng, std::vector<double>* initial_noise) {
  g_sampler_calls.fetch_add(1, std::memory_order_relaxed);
  std::vector<int> ts = strided_timesteps(sched.timesteps(), steps);
  std::vector<double> x(static_cast<std::size_t>(d.frame_values()));
  for (double& v : x) v = rng.normal();
  if (initial_noise) *initial_noise = x;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    int t = ts[i];
    int t_prev = i + 1 < ts.size() ? ts[i + 1] : -1;
    ancestral_update(d, x, t, t_prev, condition, sched, rng);
  }
  Trajectory y = make_trajectory(d.frames, d.dims, condition);
  y.values = std::move(x);
  y.seed = rng.seed();
  return y;
}

std::vector<double> sample_to(const Denoiser& d, int condition,
                              const NoiseSchedule& sched, int steps, int t_stop,
                              Rng& rng) {
  g_sampler_calls.fetch_add(1, std::memory_order_relaxed);
  std::vector<int> ts = strided_timesteps(sched.timesteps(), steps);
  std::vector<double> x(static_cast<std::size_t>(d.frame_values()));
  for (double& v : x) v = rng.normal();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (ts[i] == t_stop) return x;
    int t_prev = i + 1 < ts.size() ? ts[i + 1] : -1;
    ancestral_update(d, x, ts[i], t_prev, condition, sched, rng);
  }
  throw ConfigError("t_stop " + std::to_string(t_stop) +
                    " is not on the strided sampler schedule");
}

uint64_t sampler_call_count() {
  return g_sampler_calls.load(std::memory_order_relaxed);
}

void reset_sampler_call_count() {
  g_sampler_calls.store(0, std::memory_order_relaxed);
}

void save_trajectory_csv(const Trajectory& y, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << "# condition=" << y.condition;
  if (y.seed) out << " seed=" << *y.seed;
  out << "\n";
  for (int d = 0; d < y.dims; ++d) out << (d ? "," : "") << "d" << d;
  out << "\n";
  for (int f = 0; f < y.frames; ++f) {
    for (int d = 0; d < y.dims; ++d) {
      out << (d ? "," : "") << textio::fmt(y.at(f, d));
    }
    out << "\n";
  }
}

Trajectory load_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# condition=", 0) != 0) {
    throw ConfigError("missing condition header in " + path);
  }
  Trajectory y;
  {
    std::istringstream hs(line.substr(2));
    std::string tok;
    while (hs >> tok) {
      auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      std::string key = tok.substr(0, eq);
      std::string val = tok.substr(eq + 1);
      if (key == "condition") y.condition = std::stoi(val);
      if (key == "seed") y.seed = std::stoull(val);
    }
  }
  if (!std::getline(in, line)) throw ConfigError("missing column header in " + path);
  y.dims = static_cast<int>(textio::split(line, ',').size());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = textio::split(line, ',');
    if (static_cast<int>(cells.size()) != y.dims) {
      throw ConfigError("ragged row in " + path);
    }
    for (const auto& c : cells) y.values.push_back(textio::parse_double(c));
    y.frames += 1;
  }
  if (y.frames < 3) throw ShapeError("trajectory in " + path + " has fewer than 3 frames");
  return y;
}

void save_trajectory_batch(const std::vector<Trajectory>& items,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << "trajectory-batch 1\n";
  out << "count " << items.size() << "\n";
  for (const Trajectory& y : items) {
    out << "item condition=" << y.condition << " seed=";
    if (y.seed) {
      out << *y.seed;
    } else {
      out << "none";
    }
    out << " frames=" << y.frames << " dims=" << y.dims << "\n";
    for (int f = 0; f < y.frames; ++f) {
      for (int d = 0; d < y.dims; ++d) {
        out << (d ? " " : "") << textio::fmt(y.at(f, d));
      }
      out << "\n";
    }
  }
}

std::vector<Trajectory> load_trajectory_batch(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open: " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "trajectory-batch" || version != 1) {
    throw ConfigError("unrecognized batch header in " + path);
  }
  std::string tok;
  std::size_t count = 0;
  in >> tok >> count;
  if (tok != "count") throw ConfigError("malformed batch: " + path);
  std::vector<Trajectory> items;
  items.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    in >> tok;
    if (tok != "item") throw ConfigError("malformed batch item in " + path);
    Trajectory y;
    int frames = 0, dims = 0;
    for (int field = 0; field < 4; ++field) {
      in >> tok;
      auto eq = tok.find('=');
      if (eq == std::string::npos) throw ConfigError("malformed batch field in " + path);
      std::string key = tok.substr(0, eq);
      std::string val = tok.substr(eq + 1);
      if (key == "condition") y.condition = std::stoi(val);
      else if (key == "seed") { if (val != "none") y.seed = std::stoull(val); }
      else if (key == "frames") frames = std::stoi(val);
      else if (key == "dims") dims = std::stoi(val);
    }
    if (frames < 3 || dims < 1) throw ConfigError("bad item shape in " + path);
    y.frames = frames;
    y.dims = dims;
    y.values.resize(static_cast<std::size_t>(frames) * dims);
    for (double& v : y.values) {
      in >> tok;
      v = textio::parse_double(tok);
    }
    items.push_back(std::move(y));
  }
  if (!in) throw ConfigError("truncated batch: " + path);
  return items;
}

}  // namespace vpo::diffusion
