#include "salience/engine.hpp"

#include <cmath>

#include <omp.h>

#include "salience/error.hpp"

namespace salience::engine {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;

int g_threads = 0;  // 0 = OpenMP default

int effective_threads() { return g_threads > 0 ? g_threads : omp_get_max_threads(); }

SeqBatch zeros_like(const SeqBatch& s) {
  SeqBatch z;
  z.reserve(s.size());
  for (const auto& m : s) z.push_back(MatrixXd::Zero(m.rows(), m.cols()));
  return z;
}

SeqBatch zero_seq(std::size_t T, Index rows, Index cols) { return SeqBatch(T, MatrixXd::Zero(rows, cols)); }

void relu_inplace(MatrixXd& m) { m = m.cwiseMax(0.0); }

MatrixXd relu_mask(const MatrixXd& activated) { return (activated.array() > 0.0).cast<double>().matrix(); }

// --- convolutions ----------------------------------------------------------

void conv_forward(const ConvParams& p, const SeqBatch& in, std::size_t taps, std::size_t stride, ConvCache& cache) {
  const std::size_t T_out = valid_conv_length(in.size(), taps, stride);
  const Index B = in.front().rows();
  const Index C = in.front().cols();
  cache.patches.resize(T_out);
  cache.output.resize(T_out);
  for (std::size_t t = 0; t < T_out; ++t) {
    MatrixXd& patch = cache.patches[t];
    patch.resize(B, static_cast<Index>(taps) * C);
    for (std::size_t d = 0; d < taps; ++d) patch.middleCols(static_cast<Index>(d) * C, C) = in[t * stride + d];
    MatrixXd& out = cache.output[t];
    out.noalias() = patch * p.weight.transpose();
    out.rowwise() += p.bias.transpose();
    relu_inplace(out);
  }
}

void conv_backward(const ConvParams& p, const ConvCache& cache, const SeqBatch& d_out, std::size_t taps,
                   std::size_t stride, ConvParams* grad, SeqBatch* d_in) {
  for (std::size_t t = 0; t < cache.output.size(); ++t) {
    const MatrixXd dz = d_out[t].cwiseProduct(relu_mask(cache.output[t]));
    if (grad) {
      grad->weight.noalias() += dz.transpose() * cache.patches[t];
      grad->bias += dz.colwise().sum().transpose();
    }
    if (d_in) {
      const MatrixXd dpatch = dz * p.weight;
      const Index C = (*d_in)[0].cols();
      for (std::size_t d = 0; d < taps; ++d) (*d_in)[t * stride + d] += dpatch.middleCols(static_cast<Index>(d) * C, C);
    }
  }
}

void conv1_forward(const ConvParams& p, const SeqBatch& in, const NetworkConfig& cfg, Conv1Cache& cache) {
  const std::size_t taps = cfg.conv_width;
  const std::size_t height = cfg.conv1_height;
  const std::size_t kernels = cfg.conv_kernels;
  const Index padded = in.front().cols();
  const std::size_t positions = static_cast<std::size_t>(padded) - height + 1;
  const std::size_t T_out = valid_conv_length(in.size(), taps, cfg.conv_stride);
  const Index B = in.front().rows();
  cache.patches.assign(T_out, std::vector<MatrixXd>(positions));
  cache.output.resize(T_out);
  for (std::size_t t = 0; t < T_out; ++t) {
    MatrixXd& out = cache.output[t];
    out.resize(B, static_cast<Index>(kernels * positions));
    for (std::size_t pos = 0; pos < positions; ++pos) {
      MatrixXd& patch = cache.patches[t][pos];
      patch.resize(B, static_cast<Index>(taps * height));
      for (std::size_t d = 0; d < taps; ++d) {
        patch.middleCols(static_cast<Index>(d * height), static_cast<Index>(height)) =
            in[t * cfg.conv_stride + d].middleCols(static_cast<Index>(pos), static_cast<Index>(height));
      }
      auto block = out.middleCols(static_cast<Index>(pos * kernels), static_cast<Index>(kernels));
      block.noalias() = patch * p.weight.transpose();
      block.rowwise() += p.bias.transpose();
    }
    relu_inplace(out);
  }
}

void conv1_backward(const Conv1Cache& cache, const SeqBatch& d_out, std::size_t kernels, ConvParams& grad) {
  for (std::size_t t = 0; t < cache.output.size(); ++t) {
    const MatrixXd dz_all = d_out[t].cwiseProduct(relu_mask(cache.output[t]));
    for (std::size_t pos = 0; pos < cache.patches[t].size(); ++pos) {
      const auto dz = dz_all.middleCols(static_cast<Index>(pos * kernels), static_cast<Index>(kernels));
      grad.weight.noalias() += dz.transpose() * cache.patches[t][pos];
      grad.bias += dz.colwise().sum().transpose();
    }
  }
}

// --- recurrent layers --------------------------------------------------------

void lstm_forward(const LstmParams& p, const SeqBatch& in, bool reverse, LstmCache& cache) {
  const std::size_t T = in.size();
  const Index B = in.front().rows();
  const Index H = static_cast<Index>(p.hidden());
  cache.gates.resize(T);
  cache.cell.resize(T);
  cache.tanh_cell.resize(T);
  cache.hidden.resize(T);
  const MatrixXd zero = MatrixXd::Zero(B, H);
  for (std::size_t s = 0; s < T; ++s) {
    const std::size_t t = reverse ? T - 1 - s : s;
    const MatrixXd& h_prev = s == 0 ? zero : cache.hidden[reverse ? t + 1 : t - 1];
    const MatrixXd& c_prev = s == 0 ? zero : cache.cell[reverse ? t + 1 : t - 1];
    MatrixXd& z = cache.gates[t];
    z.noalias() = in[t] * p.input_weight.transpose();
    z.noalias() += h_prev * p.recurrent_weight.transpose();
    z.rowwise() += p.bias.transpose();
    auto zi = z.middleCols(0, H).array();
    auto zf = z.middleCols(H, H).array();
    auto zg = z.middleCols(2 * H, H).array();
    auto zo = z.middleCols(3 * H, H).array();
    zi = 1.0 / (1.0 + (-zi).exp());
    zf = 1.0 / (1.0 + (-zf).exp());
    zg = zg.tanh();
    zo = 1.0 / (1.0 + (-zo).exp());
    cache.cell[t] = (zf * c_prev.array() + zi * zg).matrix();
    cache.tanh_cell[t] = cache.cell[t].array().tanh().matrix();
    cache.hidden[t] = (zo * cache.tanh_cell[t].array()).matrix();
  }
}

/// `d_hidden` holds dLoss/dh_t from every consumer (sequence output and final
/// readout); accumulates parameter gradients and, optionally, input gradients.
void lstm_backward(const LstmParams& p, const SeqBatch& in, bool reverse, const LstmCache& cache,
                   const SeqBatch& d_hidden, LstmParams* grad, SeqBatch* d_in) {
  const std::size_t T = in.size();
  const Index B = in.front().rows();
  const Index H = static_cast<Index>(p.hidden());
  MatrixXd dh_next = MatrixXd::Zero(B, H);
  MatrixXd dc_next = MatrixXd::Zero(B, H);
  MatrixXd dz(B, 4 * H);
  const MatrixXd zero = MatrixXd::Zero(B, H);
  for (std::size_t s = T; s-- > 0;) {
    const std::size_t t = reverse ? T - 1 - s : s;
    const MatrixXd& c_prev = s == 0 ? zero : cache.cell[reverse ? t + 1 : t - 1];
    const MatrixXd& h_prev = s == 0 ? zero : cache.hidden[reverse ? t + 1 : t - 1];
    const auto gates = cache.gates[t].array();
    const auto i = gates.middleCols(0, H);
    const auto f = gates.middleCols(H, H);
    const auto g = gates.middleCols(2 * H, H);
    const auto o = gates.middleCols(3 * H, H);
    const auto tc = cache.tanh_cell[t].array();

    const Eigen::ArrayXXd dh = d_hidden[t].array() + dh_next.array();
    const Eigen::ArrayXXd dc = dc_next.array() + dh * o * (1.0 - tc * tc);
    dz.middleCols(0, H) = (dc * g * i * (1.0 - i)).matrix();
    dz.middleCols(H, H) = (dc * c_prev.array() * f * (1.0 - f)).matrix();
    dz.middleCols(2 * H, H) = (dc * i * (1.0 - g * g)).matrix();
    dz.middleCols(3 * H, H) = (dh * tc * o * (1.0 - o)).matrix();
    dc_next = (dc * f).matrix();

    if (grad) {
      grad->input_weight.noalias() += dz.transpose() * in[t];
      grad->recurrent_weight.noalias() += dz.transpose() * h_prev;
      grad->bias += dz.colwise().sum().transpose();
    }
    if (d_in) (*d_in)[t].noalias() += dz * p.input_weight;
    dh_next.noalias() = dz * p.recurrent_weight;
  }
}

void head_forward(const HeadParams& p, const SeqBatch& in, HeadCache& cache) {
  const std::size_t L = p.layers.size();
  const std::size_t T = in.size();
  cache.forward.resize(L);
  cache.backward.resize(L);
  cache.outputs.resize(L);
  for (std::size_t layer = 0; layer < L; ++layer) {
    const SeqBatch& x = layer == 0 ? in : cache.outputs[layer - 1];
    lstm_forward(p.layers[layer].forward, x, false, cache.forward[layer]);
    lstm_forward(p.layers[layer].backward, x, true, cache.backward[layer]);
    SeqBatch& out = cache.outputs[layer];
    out.resize(T);
    const Index H = static_cast<Index>(p.layers[layer].forward.hidden());
    for (std::size_t t = 0; t < T; ++t) {
      out[t].resize(x[t].rows(), 2 * H);
      out[t] << cache.forward[layer].hidden[t], cache.backward[layer].hidden[t];
    }
  }
  const Index H = static_cast<Index>(p.layers.back().forward.hidden());
  const Index B = in.front().rows();
  cache.readout.resize(B, 2 * H);
  cache.readout << cache.forward.back().hidden[T - 1], cache.backward.back().hidden[0];
  cache.logits.noalias() = cache.readout * p.output.weight.transpose();
  cache.logits.rowwise() += p.output.bias.transpose();
  cache.probs.resize(cache.logits.rows(), cache.logits.cols());
  for (Index b = 0; b < B; ++b) {
    const double m = cache.logits.row(b).maxCoeff();
    cache.probs.row(b) = (cache.logits.row(b).array() - m).exp().matrix();
    cache.probs.row(b) /= cache.probs.row(b).sum();
  }
}

void head_backward(const HeadParams& p, const SeqBatch& in, const HeadCache& cache, const MatrixXd& d_logits,
                   HeadParams* grad, SeqBatch* d_input) {
  const std::size_t L = p.layers.size();
  const std::size_t T = in.size();
  const Index B = d_logits.rows();
  if (grad) {
    grad->output.weight.noalias() += d_logits.transpose() * cache.readout;
    grad->output.bias += d_logits.colwise().sum().transpose();
  }
  const MatrixXd d_readout = d_logits * p.output.weight;
  SeqBatch d_out;  // gradient w.r.t. the current layer's output sequence
  for (std::size_t layer = L; layer-- > 0;) {
    const Index H = static_cast<Index>(p.layers[layer].forward.hidden());
    SeqBatch dh_f = zero_seq(T, B, H);
    SeqBatch dh_b = zero_seq(T, B, H);
    if (layer == L - 1) {
      dh_f[T - 1] += d_readout.leftCols(H);
      dh_b[0] += d_readout.rightCols(H);
    } else {
      for (std::size_t t = 0; t < T; ++t) {
        dh_f[t] = d_out[t].leftCols(H);
        dh_b[t] = d_out[t].rightCols(H);
      }
    }
    const SeqBatch& x = layer == 0 ? in : cache.outputs[layer - 1];
    const bool want_input = layer > 0 || d_input != nullptr;
    SeqBatch d_x = want_input ? zeros_like(x) : SeqBatch{};
    lstm_backward(p.layers[layer].forward, x, false, cache.forward[layer], dh_f,
                  grad ? &grad->layers[layer].forward : nullptr, want_input ? &d_x : nullptr);
    lstm_backward(p.layers[layer].backward, x, true, cache.backward[layer], dh_b,
                  grad ? &grad->layers[layer].backward : nullptr, want_input ? &d_x : nullptr);
    if (layer == 0) {
      if (d_input) {
        for (std::size_t t = 0; t < T; ++t) (*d_input)[t] += d_x[t];
      }
    } else {
      d_out = std::move(d_x);
    }
  }
}

/// Row-wise softmax Jacobian-vector product: p * (dp - <p, dp>).
MatrixXd softmax_backward(const MatrixXd& probs, const MatrixXd& d_probs) {
  const Eigen::VectorXd inner = probs.cwiseProduct(d_probs).rowwise().sum();
  return probs.cwiseProduct(d_probs.colwise() - inner);
}

}  // namespace

void set_thread_count(int threads) { g_threads = threads; }
int thread_count() { return effective_threads(); }

BatchInput make_batch(std::span<const LabeledWindow* const> windows, const NetworkConfig& config) {
  if (windows.empty()) throw Error(ErrorKind::EmptyInput, "empty batch");
  const std::size_t K = config.sensor_count();
  const std::size_t T = config.window_length;
  const Index B = static_cast<Index>(windows.size());
  BatchInput batch;
  batch.batch_size = windows.size();
  batch.sensors.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    const Index c = static_cast<Index>(config.channel_counts[k]);
    batch.sensors[k] = zero_seq(T, B, static_cast<Index>(config.padded_channels(k)));
    for (Index b = 0; b < B; ++b) {
      const LabeledWindow& w = *windows[static_cast<std::size_t>(b)];
      if (w.records.size() != K || w.records[k].rows() != static_cast<Index>(T) || w.records[k].cols() != c) {
        throw Error(ErrorKind::ShapeMismatch, "window " + w.user_id + "#" + std::to_string(w.index) +
                                                  " does not match the network config");
      }
      for (std::size_t t = 0; t < T; ++t) {
        batch.sensors[k][t].row(b).head(c) = w.records[k].row(static_cast<Index>(t));
      }
    }
  }
  return batch;
}

BatchInput make_batch(std::span<const LabeledWindow> windows, const NetworkConfig& config) {
  std::vector<const LabeledWindow*> ptrs;
  ptrs.reserve(windows.size());
  for (const auto& w : windows) ptrs.push_back(&w);
  return make_batch(ptrs, config);
}

Engine::Engine(NetworkConfig config) : config_(std::move(config)) { config_.validate(); }

ForwardCache Engine::forward(const NetworkState& state, BatchInput input, const ForwardOptions& options) const {
  const std::size_t K = config_.sensor_count();
  if (state.extractors.size() != K || input.sensors.size() != K) {
    throw Error(ErrorKind::ShapeMismatch, "state/input sensor count does not match the config");
  }
  ForwardCache c;
  c.input = std::move(input);
  const Index B = static_cast<Index>(c.input.batch_size);
  const bool has_local = !state.local_discriminators.empty();
  c.extractors.resize(K);
  c.locals.resize(has_local ? K : 0);
  c.pooled.resize(K);

  const int threads = effective_threads();
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1 && K > 1)
  for (std::size_t k = 0; k < K; ++k) {
    ExtractorCache& ex = c.extractors[k];
    const ExtractorParams& p = state.extractors[k];
    conv1_forward(p.conv1, c.input.sensors[k], config_, ex.conv1);
    conv_forward(p.conv2, ex.conv1.output, config_.conv_width, config_.conv_stride, ex.conv2);
    conv_forward(p.conv3, ex.conv2.output, config_.conv_width, config_.conv_stride, ex.conv3);
    const SeqBatch& X = ex.features();
    c.pooled[k] = MatrixXd::Zero(B, X.front().cols());
    for (const auto& x : X) c.pooled[k] += x;
    c.pooled[k] /= static_cast<double>(X.size());
    if (has_local) head_forward(state.local_discriminators[k], X, c.locals[k]);
  }

  if (has_local) {
    c.ybar.resize(B, static_cast<Index>(2 * K));
    for (std::size_t k = 0; k < K; ++k) c.ybar.middleCols(static_cast<Index>(2 * k), 2) = c.locals[k].probs;
  }
  if (state.attention) {
    if (!has_local) throw Error(ErrorKind::PreconditionViolated, "attention needs local discriminator outputs");
    const auto& an = *state.attention;
    const double scale = 1.0 / std::sqrt(static_cast<double>(an.query.weight.rows()));
    c.query.noalias() = c.ybar * an.query.weight.transpose();
    c.query.rowwise() += an.query.bias.transpose();
    c.keys.resize(K);
    MatrixXd scores(B, static_cast<Index>(K));
    for (std::size_t k = 0; k < K; ++k) {
      c.keys[k].noalias() = c.pooled[k] * an.key.weight.transpose();
      c.keys[k].rowwise() += an.key.bias.transpose();
      scores.col(static_cast<Index>(k)) = c.keys[k].cwiseProduct(c.query).rowwise().sum() * scale;
    }
    c.alpha.resize(B, static_cast<Index>(K));
    for (Index b = 0; b < B; ++b) {
      const double m = scores.row(b).maxCoeff();
      c.alpha.row(b) = (scores.row(b).array() - m).exp().matrix();
      c.alpha.row(b) /= c.alpha.row(b).sum();
    }
  } else {
    c.alpha = MatrixXd::Constant(B, static_cast<Index>(K), 1.0 / static_cast<double>(K));
  }

  const std::size_t T = c.extractors[0].features().size();
  c.fused = zero_seq(T, B, static_cast<Index>(config_.feature_width()));
  for (std::size_t k = 0; k < K; ++k) {
    const SeqBatch& X = c.extractors[k].features();
    for (std::size_t t = 0; t < T; ++t) {
      c.fused[t].array() += X[t].array().colwise() * c.alpha.col(static_cast<Index>(k)).array();
    }
  }

  const bool run_global = options.global && state.global_discriminator.has_value();
  if (run_global) c.global.emplace();
#pragma omp parallel sections num_threads(threads) if (threads > 1 && run_global && options.classifier)
  {
#pragma omp section
    if (options.classifier) head_forward(state.classifier, c.fused, c.classifier);
#pragma omp section
    if (run_global) head_forward(*state.global_discriminator, c.fused, *c.global);
  }
  return c;
}

void Engine::backward(const NetworkState& state, const ForwardCache& c, const OutputGradients& seeds,
                      const BackwardOptions& options, NetworkState& grad) const {
  const std::size_t K = config_.sensor_count();
  const Index B = static_cast<Index>(c.batch_size());
  const bool has_local = !state.local_discriminators.empty();
  const bool has_attention = state.attention.has_value();
  const bool need_fe = options.groups.contains(ParamGroup::FE);
  const bool need_ld = has_local && options.groups.contains(ParamGroup::LD);
  const bool need_gd = options.groups.contains(ParamGroup::GD);
  const bool need_an = has_attention && options.groups.contains(ParamGroup::AN);
  const bool need_ac = options.groups.contains(ParamGroup::AC);
  // dL/dv matters to the extractors, and through the attention weights to the
  // attention parameters and (via the query) to the local discriminators.
  const bool need_dv = need_fe || (has_attention && (need_an || (need_ld && !options.detach_query)));

  const bool run_classifier = seeds.classifier.size() > 0 && (need_ac || need_dv);
  const bool run_global = seeds.global.size() > 0 && c.global && (need_gd || need_dv);
  const std::size_t T = c.fused.size();
  SeqBatch dv_classifier = need_dv && run_classifier ? zeros_like(c.fused) : SeqBatch{};
  SeqBatch dv_global = need_dv && run_global ? zeros_like(c.fused) : SeqBatch{};

  const int threads = effective_threads();
#pragma omp parallel sections num_threads(threads) if (threads > 1 && run_classifier && run_global)
  {
#pragma omp section
    if (run_classifier) {
      head_backward(state.classifier, c.fused, c.classifier, seeds.classifier, need_ac ? &grad.classifier : nullptr,
                    need_dv ? &dv_classifier : nullptr);
    }
#pragma omp section
    if (run_global) {
      head_backward(*state.global_discriminator, c.fused, *c.global, seeds.global,
                    need_gd ? &*grad.global_discriminator : nullptr, need_dv ? &dv_global : nullptr);
    }
  }

  std::vector<SeqBatch> d_features(K);
  if (need_fe) {
    for (std::size_t k = 0; k < K; ++k) d_features[k] = zeros_like(c.extractors[k].features());
  }
  std::vector<MatrixXd> d_local(has_local ? K : 0);
  for (std::size_t k = 0; k < d_local.size(); ++k) {
    d_local[k] = k < seeds.local.size() && seeds.local[k].size() > 0 ? seeds.local[k] : MatrixXd::Zero(B, 2);
  }

  const bool have_dv = !dv_classifier.empty() || !dv_global.empty();
  if (have_dv) {
    SeqBatch dv = !dv_classifier.empty() ? dv_classifier : dv_global;
    if (!dv_classifier.empty() && !dv_global.empty()) {
      for (std::size_t t = 0; t < T; ++t) dv[t] += dv_global[t];
    }
    MatrixXd d_alpha = MatrixXd::Zero(B, static_cast<Index>(K));
    for (std::size_t k = 0; k < K; ++k) {
      const SeqBatch& X = c.extractors[k].features();
      for (std::size_t t = 0; t < T; ++t) {
        d_alpha.col(static_cast<Index>(k)) += dv[t].cwiseProduct(X[t]).rowwise().sum();
        if (need_fe) d_features[k][t].array() += dv[t].array().colwise() * c.alpha.col(static_cast<Index>(k)).array();
      }
    }
    if (has_attention) {
      const auto& an = *state.attention;
      const double scale = 1.0 / std::sqrt(static_cast<double>(an.query.weight.rows()));
      const MatrixXd d_scores = softmax_backward(c.alpha, d_alpha);
      MatrixXd d_query = MatrixXd::Zero(B, an.query.weight.rows());
      for (std::size_t k = 0; k < K; ++k) {
        const auto ds = d_scores.col(static_cast<Index>(k)).array();
        d_query.array() += c.keys[k].array().colwise() * ds * scale;
        const MatrixXd d_key = (c.query.array().colwise() * ds * scale).matrix();
        if (need_an) {
          grad.attention->key.weight.noalias() += d_key.transpose() * c.pooled[k];
          grad.attention->key.bias += d_key.colwise().sum().transpose();
        }
        if (need_fe) {
          const MatrixXd d_pooled = d_key * an.key.weight / static_cast<double>(T);
          for (std::size_t t = 0; t < T; ++t) d_features[k][t] += d_pooled;
        }
      }
      if (need_an) {
        grad.attention->query.weight.noalias() += d_query.transpose() * c.ybar;
        grad.attention->query.bias += d_query.colwise().sum().transpose();
      }
      if (!options.detach_query) {
        const MatrixXd d_ybar = d_query * an.query.weight;
        for (std::size_t k = 0; k < K; ++k) {
          d_local[k] += softmax_backward(c.locals[k].probs, d_ybar.middleCols(static_cast<Index>(2 * k), 2));
        }
      }
    }
  }

#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1 && K > 1)
  for (std::size_t k = 0; k < K; ++k) {
    const SeqBatch& X = c.extractors[k].features();
    if (has_local && (need_ld || need_fe) && d_local[k].cwiseAbs().maxCoeff() > 0.0) {
      head_backward(state.local_discriminators[k], X, c.locals[k], d_local[k],
                    need_ld ? &grad.local_discriminators[k] : nullptr, need_fe ? &d_features[k] : nullptr);
    }
    if (need_fe) {
      const ExtractorCache& ex = c.extractors[k];
      const ExtractorParams& p = state.extractors[k];
      ExtractorParams& g = grad.extractors[k];
      SeqBatch d2 = zeros_like(ex.conv2.output);
      conv_backward(p.conv3, ex.conv3, d_features[k], config_.conv_width, config_.conv_stride, &g.conv3, &d2);
      SeqBatch d1 = zeros_like(ex.conv1.output);
      conv_backward(p.conv2, ex.conv2, d2, config_.conv_width, config_.conv_stride, &g.conv2, &d1);
      conv1_backward(ex.conv1, d1, config_.conv_kernels, g.conv1);
    }
  }
}

std::vector<ForwardTrace> Engine::traces(const ForwardCache& c) {
  const std::size_t B = c.batch_size();
  const std::size_t K = c.extractors.size();
  std::vector<ForwardTrace> out(B);
  const std::size_t T = c.fused.size();
  for (std::size_t b = 0; b < B; ++b) {
    const Index bi = static_cast<Index>(b);
    ForwardTrace& tr = out[b];
    for (std::size_t k = 0; k < K; ++k) {
      const SeqBatch& X = c.extractors[k].features();
      MatrixXd f(static_cast<Index>(T), X.front().cols());
      for (std::size_t t = 0; t < T; ++t) f.row(static_cast<Index>(t)) = X[t].row(bi);
      tr.features.push_back(std::move(f));
      tr.pooled.push_back(c.pooled[k].row(bi).transpose());
    }
    if (!c.locals.empty()) {
      tr.local_probs.resize(static_cast<Index>(K), 2);
      for (std::size_t k = 0; k < K; ++k) tr.local_probs.row(static_cast<Index>(k)) = c.locals[k].probs.row(bi);
    }
    tr.attention = c.alpha.row(bi).transpose();
    tr.fused.resize(static_cast<Index>(T), c.fused.front().cols());
    for (std::size_t t = 0; t < T; ++t) tr.fused.row(static_cast<Index>(t)) = c.fused[t].row(bi);
    if (c.classifier.logits.size() > 0) {
      tr.class_logits = c.classifier.logits.row(bi).transpose();
      tr.class_probs = c.classifier.probs.row(bi).transpose();
    }
    if (c.global) tr.global_probs = c.global->probs.row(bi).transpose();
  }
  return out;
}

}  // namespace salience::engine
