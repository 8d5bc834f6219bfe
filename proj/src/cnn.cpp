#include "thzleaf/cnn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "thzleaf/errors.hpp"
#include "thzleaf/hash.hpp"
#include "thzleaf/rng.hpp"

namespace thzleaf::cnn {

using nlohmann::json;

void Architecture::validate() const {
  if (channels.empty()) throw InvalidArgument("architecture needs at least one conv block");
  if (kernel % 2 == 0 || kernel < 1) throw InvalidArgument("kernel width must be odd");
  for (auto c : channels)
    if (c == 0) throw InvalidArgument("channel counts must be positive");
  for (auto h : hidden)
    if (h == 0) throw InvalidArgument("hidden sizes must be positive");
  std::size_t len = input_length;
  for (std::size_t b = 0; b < channels.size(); ++b) {
    if (len < 2) throw InvalidArgument("input too short for " + std::to_string(channels.size()) + " pooling stages");
    len /= 2;
  }
}

std::vector<std::size_t> Architecture::shape_chain() const {
  std::vector<std::size_t> chain{input_length};
  for (std::size_t b = 0; b < channels.size(); ++b) chain.push_back(chain.back() / 2);
  return chain;
}

std::size_t Architecture::flatten_size() const { return channels.back() * shape_chain().back(); }

ParamCounts count_parameters(const Architecture& arch) {
  arch.validate();
  ParamCounts pc;
  std::size_t cin = 1;
  for (auto c : arch.channels) {
    pc.feature_part += c * cin * arch.kernel + c + 2 * c;
    cin = c;
  }
  std::size_t in = arch.head_input_size();
  for (auto h : arch.hidden) {
    pc.regression_part += in * h + h;
    in = h;
  }
  pc.regression_part += in + 1;
  pc.total = pc.feature_part + pc.regression_part;
  return pc;
}

// ---------------------------------------------------------------------------

template <class T>
Network<T>::Network(const Architecture& arch) : arch_(arch) {
  arch_.validate();
  std::size_t off = 0, roff = 0;
  auto add = [&](const std::string& name, std::vector<std::size_t> shape) {
    std::size_t size = 1;
    for (auto s : shape) size *= s;
    layout_.push_back({name, shape, off, size});
    off += size;
    return off - size;
  };
  auto add_running = [&](const std::string& name, std::size_t n) {
    running_layout_.push_back({name, {n}, roff, n});
    roff += n;
    return roff - n;
  };
  std::size_t cin = 1, len = arch_.input_length;
  for (std::size_t b = 0; b < arch_.channels.size(); ++b) {
    const auto c = arch_.channels[b];
    const std::string p = "block" + std::to_string(b + 1) + ".";
    Block blk{};
    blk.cin = cin;
    blk.cout = c;
    blk.len = len;
    blk.w = add(p + "conv.weight", {c, cin, arch_.kernel});
    blk.b = add(p + "conv.bias", {c});
    blk.gamma = add(p + "bn.gamma", {c});
    blk.beta = add(p + "bn.beta", {c});
    blk.rmean = add_running(p + "bn.running_mean", c);
    blk.rvar = add_running(p + "bn.running_var", c);
    blocks_.push_back(blk);
    cin = c;
    len /= 2;
  }
  std::size_t in = arch_.head_input_size();
  std::vector<std::size_t> outs = arch_.hidden;
  outs.push_back(1);
  for (std::size_t l = 0; l < outs.size(); ++l) {
    const std::string p = "dense" + std::to_string(l + 1) + ".";
    Dense d{};
    d.in = in;
    d.out = outs[l];
    d.w = add(p + "weight", {outs[l], in});
    d.b = add(p + "bias", {outs[l]});
    dense_.push_back(d);
    in = outs[l];
  }
  params.assign(off, T(0));
  grads.assign(off, T(0));
  running.assign(roff, T(0));
  for (const auto& blk : blocks_) std::fill_n(running.begin() + static_cast<std::ptrdiff_t>(blk.rvar), blk.cout, T(1));
}

template <class T>
void Network<T>::init(std::uint64_t seed) {
  Rng rng(seed);
  auto uniform = [&](std::size_t off, std::size_t n, double bound) {
    for (std::size_t i = 0; i < n; ++i) params[off + i] = static_cast<T>(rng.uniform(-bound, bound));
  };
  std::fill(params.begin(), params.end(), T(0));
  for (const auto& blk : blocks_) {
    uniform(blk.w, blk.cout * blk.cin * arch_.kernel, std::sqrt(6.0 / static_cast<double>(blk.cin * arch_.kernel)));
    std::fill_n(params.begin() + static_cast<std::ptrdiff_t>(blk.gamma), blk.cout, T(1));
    std::fill_n(running.begin() + static_cast<std::ptrdiff_t>(blk.rmean), blk.cout, T(0));
    std::fill_n(running.begin() + static_cast<std::ptrdiff_t>(blk.rvar), blk.cout, T(1));
  }
  for (const auto& d : dense_) uniform(d.w, d.out * d.in, std::sqrt(6.0 / static_cast<double>(d.in)));
}

template <class T>
std::vector<T> Network<T>::forward(const T* x, const T* a, std::size_t batch, bool training) {
  if (batch == 0) throw InvalidArgument("empty batch");
  if (training && batch < 2) throw InvalidArgument("training-mode batch norm needs a batch of at least 2");
  batch_ = batch;
  cached_training_ = training;
  const std::size_t nb = blocks_.size();
  in_.resize(nb + 1);
  xhat_.resize(nb);
  relu_.resize(nb);
  argmax_.resize(nb);
  invstd_.resize(nb);
  in_[0].assign(x, x + batch * arch_.input_length);
  a_.assign(a, a + batch);

  for (std::size_t bi = 0; bi < nb; ++bi) {
    const auto& blk = blocks_[bi];
    auto& z = relu_[bi];
    z.resize(batch * blk.cout * blk.len);
    for (std::size_t b = 0; b < batch; ++b)
      conv1d_forward(in_[bi].data() + b * blk.cin * blk.len, blk.cin, blk.len, params.data() + blk.w,
                     params.data() + blk.b, blk.cout, arch_.kernel, z.data() + b * blk.cout * blk.len);
    if (training) {
      xhat_[bi].resize(z.size());
      invstd_[bi].resize(blk.cout);
    }
    batchnorm_forward(z.data(), batch, blk.cout, blk.len, params.data() + blk.gamma, params.data() + blk.beta,
                      running.data() + blk.rmean, running.data() + blk.rvar, training, bn,
                      training ? xhat_[bi].data() : nullptr, training ? invstd_[bi].data() : nullptr);
    relu_inplace(z.data(), z.size());
    const std::size_t out_len = blk.len / 2;
    in_[bi + 1].resize(batch * blk.cout * out_len);
    argmax_[bi].resize(in_[bi + 1].size());
    for (std::size_t b = 0; b < batch; ++b)
      maxpool_forward(z.data() + b * blk.cout * blk.len, blk.cout, blk.len, in_[bi + 1].data() + b * blk.cout * out_len,
                      argmax_[bi].data() + b * blk.cout * out_len);
  }

  const std::size_t flat = arch_.flatten_size();
  const std::size_t head_in = arch_.head_input_size();
  head_in_.resize(dense_.size());
  head_pre_.resize(dense_.size());
  head_in_[0].resize(batch * head_in);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(in_[nb].data() + b * flat, flat, head_in_[0].data() + b * head_in);
    if (arch_.use_humidity) head_in_[0][b * head_in + flat] = a_[b];
  }
  for (std::size_t l = 0; l < dense_.size(); ++l) {
    const auto& d = dense_[l];
    head_pre_[l].resize(batch * d.out);
    for (std::size_t b = 0; b < batch; ++b)
      dense_forward(head_in_[l].data() + b * d.in, d.in, params.data() + d.w, params.data() + d.b, d.out,
                    head_pre_[l].data() + b * d.out);
    if (l + 1 < dense_.size()) {
      head_in_[l + 1] = head_pre_[l];
      relu_inplace(head_in_[l + 1].data(), head_in_[l + 1].size());
    }
  }
  return head_pre_.back();
}

template <class T>
void Network<T>::backward(const T* dout) {
  if (!cached_training_ || batch_ == 0) throw InvalidArgument("backward needs a preceding training-mode forward pass");
  const std::size_t batch = batch_;
  std::vector<T> d(dout, dout + batch);  // gradient w.r.t. the current layer's pre-activation
  std::vector<T> dx;
  for (std::size_t l = dense_.size(); l-- > 0;) {
    const auto& dl = dense_[l];
    dx.assign(batch * dl.in, T(0));
    for (std::size_t b = 0; b < batch; ++b)
      dense_backward(head_in_[l].data() + b * dl.in, dl.in, params.data() + dl.w, dl.out, d.data() + b * dl.out,
                     dx.data() + b * dl.in, grads.data() + dl.w, grads.data() + dl.b);
    if (l > 0) {
      for (std::size_t i = 0; i < dx.size(); ++i)
        if (!(head_pre_[l - 1][i] > T(0))) dx[i] = T(0);
    }
    d.swap(dx);
  }
  // d now holds the gradient w.r.t. the head input; drop the humidity column.
  const std::size_t nb = blocks_.size();
  const std::size_t flat = arch_.flatten_size();
  const std::size_t head_in = arch_.head_input_size();
  std::vector<T> dpool(batch * flat);
  for (std::size_t b = 0; b < batch; ++b) std::copy_n(d.data() + b * head_in, flat, dpool.data() + b * flat);

  std::vector<T> dz;
  for (std::size_t bi = nb; bi-- > 0;) {
    const auto& blk = blocks_[bi];
    const std::size_t out_len = blk.len / 2;
    dz.resize(batch * blk.cout * blk.len);
    for (std::size_t b = 0; b < batch; ++b)
      maxpool_backward(dpool.data() + b * blk.cout * out_len, argmax_[bi].data() + b * blk.cout * out_len, blk.cout,
                       blk.len, dz.data() + b * blk.cout * blk.len);
    const auto& r = relu_[bi];
    for (std::size_t i = 0; i < dz.size(); ++i)
      if (!(r[i] > T(0))) dz[i] = T(0);
    batchnorm_backward(dz.data(), xhat_[bi].data(), invstd_[bi].data(), batch, blk.cout, blk.len,
                       params.data() + blk.gamma, grads.data() + blk.gamma, grads.data() + blk.beta);
    const bool need_dx = bi > 0;
    if (need_dx) dpool.assign(batch * blk.cin * blk.len, T(0));
    for (std::size_t b = 0; b < batch; ++b)
      conv1d_backward(in_[bi].data() + b * blk.cin * blk.len, blk.cin, blk.len, params.data() + blk.w, blk.cout,
                      arch_.kernel, dz.data() + b * blk.cout * blk.len,
                      need_dx ? dpool.data() + b * blk.cin * blk.len : nullptr, grads.data() + blk.w,
                      grads.data() + blk.b);
  }
}

template <class T>
std::vector<std::vector<double>> Network<T>::activations(const T* x, T a) {
  forward(x, &a, 1, false);
  std::vector<std::vector<double>> out;
  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    const auto& blk = blocks_[bi];
    std::vector<double> m(blk.len, 0.0);
    for (std::size_t c = 0; c < blk.cout; ++c)
      for (std::size_t i = 0; i < blk.len; ++i) m[i] += static_cast<double>(relu_[bi][c * blk.len + i]);
    for (auto& v : m) v /= static_cast<double>(blk.cout);
    out.push_back(std::move(m));
  }
  return out;
}

template class Network<float>;
template class Network<double>;

// ---------------------------------------------------------------------------

template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw InvalidArgument("adam: gradient size mismatch");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), T(0));
    state.v.assign(params.size(), T(0));
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw InvalidArgument("adam: state size mismatch");
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step = static_cast<T>(cfg.lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    params[i] -= step * state.m[i] / (std::sqrt(state.v[i] * inv_c2) + eps);
  }
}

template void adam_step<float>(std::span<float>, std::span<const float>, AdamState<float>&, const AdamConfig&);
template void adam_step<double>(std::span<double>, std::span<const double>, AdamState<double>&, const AdamConfig&);

// ---------------------------------------------------------------------------

InputNorm InputNorm::fit(std::span<const double> a, double trace_scale) {
  if (!(trace_scale > 0.0)) throw InvalidArgument("trace scale must be positive");
  InputNorm n;
  n.trace_scale = trace_scale;
  if (a.empty()) {
    n.sigma_defaulted = true;
    return n;
  }
  double m = 0.0;
  for (double v : a) m += v;
  m /= static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a) s += (v - m) * (v - m);
  s = std::sqrt(s / static_cast<double>(a.size()));
  n.mu_a = m;
  if (s > 0.0) {
    n.sigma_a = s;
  } else {
    n.sigma_a = 1.0;
    n.sigma_defaulted = true;
  }
  return n;
}

void InputNorm::apply(const Dataset& d, std::vector<float>& x, std::vector<float>& a) const {
  const std::size_t n_t = d.n_t();
  x.resize(d.size() * n_t);
  a.resize(d.size());
  const auto scale = static_cast<float>(trace_scale);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& s = d.records[i].trace.samples;
    for (std::size_t k = 0; k < n_t; ++k) x[i * n_t + k] = s[k] / scale;
    a[i] = static_cast<float>(humidity(d.records[i].a));
  }
}

std::string history_csv(std::span<const EpochStats> history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_loss,val_loss\n";
  for (const auto& h : history) os << h.epoch << ',' << h.train_loss << ',' << h.val_loss << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------

double CnnModel::predict(const TimeTrace& trace, double a) {
  if (trace.size() != net.arch().input_length)
    throw InvalidArgument("trace has " + std::to_string(trace.size()) + " samples, model expects " +
                          std::to_string(net.arch().input_length));
  std::vector<float> x(trace.size());
  const auto scale = static_cast<float>(norm.trace_scale);
  for (std::size_t k = 0; k < x.size(); ++k) x[k] = trace.samples[k] / scale;
  const auto an = static_cast<float>(norm.humidity(a));
  return static_cast<double>(net.forward(x.data(), &an, 1, false)[0]);
}

std::vector<double> CnnModel::predict(const Dataset& d) {
  if (d.empty()) return {};
  if (d.n_t() != net.arch().input_length)
    throw InvalidArgument("dataset traces have " + std::to_string(d.n_t()) + " samples, model expects " +
                          std::to_string(net.arch().input_length));
  std::vector<float> x, a;
  norm.apply(d, x, a);
  std::vector<double> out;
  out.reserve(d.size());
  const std::size_t chunk = 128, n_t = d.n_t();
  for (std::size_t s = 0; s < d.size(); s += chunk) {
    const std::size_t b = std::min(chunk, d.size() - s);
    const auto y = net.forward(x.data() + s * n_t, a.data() + s, b, false);
    for (auto v : y) out.push_back(static_cast<double>(v));
  }
  return out;
}

std::vector<std::vector<double>> CnnModel::layer_activations(const TimeTrace& trace, double a) {
  if (trace.size() != net.arch().input_length) throw InvalidArgument("trace length does not match the model input");
  std::vector<float> x(trace.size());
  for (std::size_t k = 0; k < x.size(); ++k) x[k] = trace.samples[k] / static_cast<float>(norm.trace_scale);
  return net.activations(x.data(), static_cast<float>(norm.humidity(a)));
}

namespace {

constexpr const char* kFormat = "thzleaf-cnn";
constexpr int kVersion = 1;

json layout_json(const std::vector<ParamBlock>& layout) {
  json arr = json::array();
  for (const auto& p : layout) arr.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", p.offset}, {"size", p.size}});
  return arr;
}

void write_f32(std::ofstream& out, std::span<const float> v) {
  std::vector<unsigned char> buf(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u;
    std::memcpy(&u, &v[i], 4);
    for (int b = 0; b < 4; ++b) buf[i * 4 + static_cast<std::size_t>(b)] = static_cast<unsigned char>(u >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

std::vector<float> read_f32(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() % 4 != 0) throw FormatError(file.string() + ": payload size is not a multiple of 4");
  std::vector<float> v(buf.size() / 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(buf[i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
    std::memcpy(&v[i], &u, 4);
  }
  return v;
}

}  // namespace

std::string CnnModel::header_json(const std::string& weights_name) const {
  const auto& arch = net.arch();
  const auto pc = count_parameters(arch);
  json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["architecture"] = {{"input_length", arch.input_length},
                       {"channels", arch.channels},
                       {"hidden", arch.hidden},
                       {"kernel", arch.kernel},
                       {"use_humidity", arch.use_humidity},
                       {"shape_chain", arch.shape_chain()}};
  j["normalization"] = {{"trace_scale", norm.trace_scale},
                        {"mu_a", norm.mu_a},
                        {"sigma_a", norm.sigma_a},
                        {"sigma_defaulted", norm.sigma_defaulted}};
  j["batchnorm"] = {{"momentum", net.bn.momentum}, {"eps", net.bn.eps}};
  j["seed"] = seed;
  j["data_hash"] = hex64(data_hash);
  j["epochs_trained"] = epochs_trained;
  j["parameter_counts"] = {{"total", pc.total}, {"feature_part", pc.feature_part}, {"regression_part", pc.regression_part}};
  j["weights_file"] = weights_name;
  j["payload"] = {{"dtype", "float32-le"}, {"count", net.params.size() + net.running.size()}};
  j["parameters"] = layout_json(net.layout());
  j["running_statistics"] = layout_json(net.running_layout());
  return j.dump(1);
}

void CnnModel::save(const std::filesystem::path& json_file, const std::filesystem::path& weights_file) const {
  {
    std::ofstream out(json_file, std::ios::binary);
    if (!out) throw IoError("cannot write " + json_file.string());
    out << header_json(weights_file.filename().string()) << '\n';
    if (!out) throw IoError("write failed for " + json_file.string());
  }
  std::ofstream out(weights_file, std::ios::binary);
  if (!out) throw IoError("cannot write " + weights_file.string());
  write_f32(out, net.params);
  write_f32(out, net.running);
  if (!out) throw IoError("write failed for " + weights_file.string());
}

CnnModel CnnModel::load(const std::filesystem::path& json_file, const std::filesystem::path& weights_file) {
  std::ifstream in(json_file, std::ios::binary);
  if (!in) throw IoError("cannot read " + json_file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  CnnModel m;
  try {
    const json j = json::parse(ss.str());
    if (j.at("format").get<std::string>() != kFormat) throw FormatError(json_file.string() + " is not a CNN model file");
    if (j.at("version").get<int>() != kVersion)
      throw FormatError("unsupported CNN schema version " + std::to_string(j.at("version").get<int>()));
    Architecture arch;
    const auto& ja = j.at("architecture");
    arch.input_length = ja.at("input_length").get<std::size_t>();
    arch.channels = ja.at("channels").get<std::vector<std::size_t>>();
    arch.hidden = ja.at("hidden").get<std::vector<std::size_t>>();
    arch.kernel = ja.at("kernel").get<std::size_t>();
    arch.use_humidity = ja.at("use_humidity").get<bool>();
    m.net = Network<float>(arch);
    const auto& jn = j.at("normalization");
    m.norm.trace_scale = jn.at("trace_scale").get<double>();
    m.norm.mu_a = jn.at("mu_a").get<double>();
    m.norm.sigma_a = jn.at("sigma_a").get<double>();
    m.norm.sigma_defaulted = jn.at("sigma_defaulted").get<bool>();
    m.net.bn.momentum = j.at("batchnorm").at("momentum").get<double>();
    m.net.bn.eps = j.at("batchnorm").at("eps").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.data_hash = parse_hex64(j.at("data_hash").get<std::string>());
    m.epochs_trained = j.at("epochs_trained").get<int>();
    const auto& jp = j.at("parameters");
    if (jp.size() != m.net.layout().size()) throw FormatError("parameter layout does not match the architecture");
    for (std::size_t i = 0; i < jp.size(); ++i)
      if (jp[i].at("name").get<std::string>() != m.net.layout()[i].name ||
          jp[i].at("size").get<std::size_t>() != m.net.layout()[i].size)
        throw FormatError("parameter block " + std::to_string(i) + " does not match the architecture");
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed CNN model JSON: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid CNN architecture: ") + e.what());
  }
  const auto w = read_f32(weights_file);
  if (w.size() != m.net.params.size() + m.net.running.size())
    throw FormatError(weights_file.string() + ": expected " +
                      std::to_string(m.net.params.size() + m.net.running.size()) + " floats, found " +
                      std::to_string(w.size()));
  std::copy_n(w.begin(), m.net.params.size(), m.net.params.begin());
  std::copy(w.begin() + static_cast<std::ptrdiff_t>(m.net.params.size()), w.end(), m.net.running.begin());
  return m;
}

// ---------------------------------------------------------------------------

TrainResult train(const Dataset& data, const Architecture& arch, const TrainConfig& cfg) {
  arch.validate();
  if (cfg.epochs < 0) throw InvalidArgument("epochs must be >= 0");
  if (cfg.batch_size < 2) throw InvalidArgument("batch size must be >= 2");
  if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0)) throw InvalidArgument("val_fraction must be in [0, 1)");
  if (data.size() < 4) throw InvalidArgument("training needs at least 4 records");
  if (data.n_t() != arch.input_length)
    throw InvalidArgument("traces have " + std::to_string(data.n_t()) + " samples, architecture expects " +
                          std::to_string(arch.input_length));

  std::vector<std::size_t> tr, va;
  const auto n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(data.size())));
  if (n_val >= 1 && n_val < data.size()) {
    auto s = split_random_indices(data.size(), cfg.val_fraction, cfg.seed);
    tr = std::move(s.train);
    va = std::move(s.test);
  } else {
    tr.resize(data.size());
    std::iota(tr.begin(), tr.end(), std::size_t{0});
  }

  CnnModel model;
  model.net = Network<float>(arch);
  model.net.init(cfg.seed);
  model.seed = cfg.seed;
  model.data_hash = data.content_hash();
  std::vector<double> a_train;
  for (auto i : tr) a_train.push_back(data.records[i].a);
  model.norm = InputNorm::fit(a_train, cfg.input_scale);

  std::vector<float> x_all, a_all;
  model.norm.apply(data, x_all, a_all);
  const auto y_all = data.targets();
  const std::size_t n_t = arch.input_length;

  double y_mean = 0.0;
  for (auto i : tr) y_mean += y_all[i];
  y_mean /= static_cast<double>(tr.size());
  const auto& last = model.net.layout().back();  // output bias
  model.net.params[last.offset] = static_cast<float>(y_mean);

  auto eval_loss = [&](CnnModel& m, const std::vector<std::size_t>& idx) {
    if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<float> xb, ab;
    double s = 0.0;
    for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, idx.size() - start);
      xb.resize(b * n_t);
      ab.resize(b);
      for (std::size_t k = 0; k < b; ++k) {
        std::copy_n(x_all.data() + idx[start + k] * n_t, n_t, xb.data() + k * n_t);
        ab[k] = a_all[idx[start + k]];
      }
      const auto out = m.net.forward(xb.data(), ab.data(), b, false);
      for (std::size_t k = 0; k < b; ++k) {
        const double e = static_cast<double>(out[k]) - y_all[idx[start + k]];
        s += e * e;
      }
    }
    return s / static_cast<double>(idx.size());
  };

  TrainResult res;
  AdamState<float> adam;
  double best_val = std::numeric_limits<double>::infinity();
  res.best_model = model;
  std::vector<float> xb, ab, dout;
  const Rng master(cfg.seed);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto order = tr;
    Rng rng = master.substream(static_cast<std::uint64_t>(epoch));
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, order.size() - start);
      if (b < 2) continue;
      xb.resize(b * n_t);
      ab.resize(b);
      for (std::size_t k = 0; k < b; ++k) {
        std::copy_n(x_all.data() + order[start + k] * n_t, n_t, xb.data() + k * n_t);
        ab[k] = a_all[order[start + k]];
      }
      const auto out = model.net.forward(xb.data(), ab.data(), b, true);
      dout.resize(b);
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < b; ++k) {
        const double e = static_cast<double>(out[k]) - y_all[order[start + k]];
        batch_loss += e * e;
        dout[k] = static_cast<float>(2.0 * e / static_cast<double>(b));
      }
      if (!std::isfinite(batch_loss))
        throw NumericError("non-finite training loss in epoch " + std::to_string(epoch) + " at batch starting " +
                           std::to_string(start));
      loss_sum += batch_loss;
      seen += b;
      model.net.zero_grads();
      model.net.backward(dout.data());
      adam_step<float>(model.net.params, model.net.grads, adam, cfg.adam);
    }
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    st.val_loss = eval_loss(model, va);
    if (va.empty()) st.val_loss = st.train_loss;
    if (!std::isfinite(st.val_loss)) throw NumericError("non-finite validation loss in epoch " + std::to_string(epoch));
    model.epochs_trained = epoch;
    res.history.push_back(st);
    if (st.val_loss < best_val) {
      best_val = st.val_loss;
      res.best_model = model;
      res.best_epoch = epoch;
    }
  }
  res.final_model = model;
  if (cfg.epochs == 0) res.best_model = model;
  return res;
}

}  // namespace thzleaf::cnn
