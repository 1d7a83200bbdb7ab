#include "sembid/probing.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include <Eigen/Sparse>
#include <fmt/format.h>

#include "sembid/dataset.hpp"
#include "sembid/errors.hpp"
#include "sembid/nn.hpp"
#include "sembid/semantic_signals.hpp"
#include "sembid/tensor.hpp"
#include "sembid/training.hpp"

namespace sembid {

namespace {

std::vector<Eigen::Index> split_permutation(Eigen::Index n, std::uint64_t seed) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Rng rng(derive_seed(seed, "probe-split"));
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  return perm;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, const std::vector<Eigen::Index>& idx,
                          std::size_t begin, std::size_t end) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(end - begin), X.cols());
  for (std::size_t i = begin; i < end; ++i) out.row(static_cast<Eigen::Index>(i - begin)) = X.row(idx[i]);
  return out;
}

Eigen::VectorXd take(const Eigen::VectorXd& y, const std::vector<Eigen::Index>& idx,
                     std::size_t begin, std::size_t end) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(end - begin));
  for (std::size_t i = begin; i < end; ++i) out(static_cast<Eigen::Index>(i - begin)) = y(idx[i]);
  return out;
}

}  // namespace

double r_squared(const Eigen::VectorXd& y, const Eigen::VectorXd& pred) {
  const double mean = y.mean();
  const double ss_tot = (y.array() - mean).square().sum();
  if (ss_tot == 0.0) return 0.0;
  const double ss_res = (y - pred).squaredNorm();
  return 1.0 - ss_res / ss_tot;
}

ProbeReport linear_probe(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         std::uint64_t split_seed, double ridge, std::string label) {
  if (X.rows() != y.size()) throw DomainError("probe needs one target per embedding row");
  if (X.rows() < 50) throw DomainError("probe needs at least 50 samples");
  if (!(ridge >= 0.0)) throw DomainError("ridge must be nonnegative");
  const auto perm = split_permutation(X.rows(), split_seed);
  const std::size_t n = perm.size();
  const std::size_t n_train = n * 4 / 5;
  const Eigen::MatrixXd Xtr = take_rows(X, perm, 0, n_train);
  const Eigen::VectorXd ytr = take(y, perm, 0, n_train);
  const Eigen::MatrixXd Xte = take_rows(X, perm, n_train, n);
  const Eigen::VectorXd yte = take(y, perm, n_train, n);

  const Eigen::RowVectorXd mu = Xtr.colwise().mean();
  const double ymu = ytr.mean();
  const double nt = static_cast<double>(n_train);
  const double density =
      static_cast<double>((Xtr.array() != 0.0).count()) / static_cast<double>(Xtr.size());
  Eigen::MatrixXd gram;
  if (density < 0.1) {
    const Eigen::SparseMatrix<double> S = Xtr.sparseView();
    gram = Eigen::MatrixXd(S.transpose() * S);
  } else {
    gram = Eigen::MatrixXd::Zero(X.cols(), X.cols());
    gram.selfadjointView<Eigen::Lower>().rankUpdate(Xtr.transpose());
    gram = gram.selfadjointView<Eigen::Lower>();
  }
  gram.noalias() -= nt * mu.transpose() * mu;
  gram.diagonal().array() += ridge;
  const Eigen::VectorXd rhs = Xtr.transpose() * ytr - nt * ymu * mu.transpose();
  const Eigen::VectorXd w = gram.ldlt().solve(rhs);
  const Eigen::VectorXd pred =
      ((Xte.rowwise() - mu) * w).array() + ymu;

  ProbeReport r;
  r.label = std::move(label);
  r.n_train = static_cast<int>(n_train);
  r.n_test = static_cast<int>(n - n_train);
  r.mse = (yte - pred).squaredNorm() / static_cast<double>(yte.size());
  r.mae = (yte - pred).cwiseAbs().mean();
  if (y.maxCoeff() == y.minCoeff()) {
    r.degenerate = true;
    r.r2 = 0.0;
  } else {
    r.r2 = r_squared(yte, pred);
  }
  return r;
}

double CcaResult::mean() const {
  if (correlations.empty()) return 0.0;
  return std::accumulate(correlations.begin(), correlations.end(), 0.0) /
         static_cast<double>(correlations.size());
}

namespace {

// Orthonormal basis of the centered column space.
Eigen::MatrixXd whiten(const Eigen::MatrixXd& X) {
  const Eigen::MatrixXd Xc = X.rowwise() - X.colwise().mean();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(Xc, Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  Eigen::Index rank = 0;
  const double tol = s.size() > 0 ? s(0) * 1e-10 * static_cast<double>(std::max(X.rows(), X.cols())) : 0.0;
  while (rank < s.size() && s(rank) > tol) ++rank;
  return svd.matrixU().leftCols(rank);
}

}  // namespace

CcaResult canonical_correlations(const Eigen::MatrixXd& Xa, const Eigen::MatrixXd& Xb, int k) {
  if (Xa.rows() != Xb.rows()) throw DomainError("CCA inputs need the same number of rows");
  if (Xa.rows() < 2) throw DomainError("CCA needs at least two rows");
  if (k < 1) throw DomainError("CCA k must be >= 1");
  const Eigen::MatrixXd Ua = whiten(Xa);
  const Eigen::MatrixXd Ub = whiten(Xb);
  CcaResult out;
  out.k_requested = k;
  const auto max_k = std::min(Ua.cols(), Ub.cols());
  out.k_used = static_cast<int>(std::min<Eigen::Index>(k, max_k));
  if (out.k_used < k) {
    out.reduced = true;
    std::cerr << fmt::format("warning: CCA rank {} below requested k={}; using k={}\n", max_k, k,
                             out.k_used);
  }
  if (out.k_used == 0) return out;
  const Eigen::MatrixXd M = Ua.transpose() * Ub;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(M);
  const auto& s = svd.singularValues();
  for (int i = 0; i < out.k_used; ++i) out.correlations.push_back(std::clamp(s(i), 0.0, 1.0));
  return out;
}

double cca_avg(const Eigen::MatrixXd& Xa, const Eigen::MatrixXd& Xb, int k) {
  return canonical_correlations(Xa, Xb, k).mean();
}

FusionMechanism parse_fusion(std::string_view name) {
  for (FusionMechanism m : kAllFusions)
    if (fusion_name(m) == name) return m;
  throw ConfigError("unknown fusion mechanism '" + std::string(name) + "'");
}

std::string_view fusion_name(FusionMechanism m) {
  switch (m) {
    case FusionMechanism::kConcat: return "concat";
    case FusionMechanism::kResidual: return "residual";
    case FusionMechanism::kGated: return "gated";
    case FusionMechanism::kCrossAttention: return "cross_attention";
    case FusionMechanism::kFilm: return "film";
    case FusionMechanism::kNumericOnly: return "numeric_only";
  }
  return "?";
}

FusionData make_fusion_task(const FusionTaskConfig& cfg, std::uint64_t seed) {
  if (cfg.n < 50 || cfg.numeric_dim < 1 || cfg.roles < 1 || cfg.role_dim < 1) {
    throw ConfigError("fusion task dimensions must be positive and n >= 50");
  }
  Rng rng(derive_seed(seed, "fusion-task"));
  const int dx = cfg.numeric_dim;
  const int R = cfg.roles;
  const int de = cfg.role_dim;
  Eigen::VectorXd a(dx);
  for (int j = 0; j < dx; ++j) a(j) = rng.normal() / std::sqrt(static_cast<double>(dx));
  Eigen::MatrixXd selector(R, dx);
  Eigen::MatrixXd codes(R, de);
  for (int r = 0; r < R; ++r) {
    for (int j = 0; j < dx; ++j) selector(r, j) = rng.normal();
    for (int j = 0; j < de; ++j) codes(r, j) = 2.0 * rng.normal() / std::sqrt(static_cast<double>(de));
  }
  Eigen::VectorXd u(de);
  for (int j = 0; j < de; ++j) u(j) = rng.normal();
  u.normalize();

  FusionData d;
  d.roles = R;
  d.numeric.resize(cfg.n, dx);
  d.semantic.resize(cfg.n, R * de);
  d.target.resize(cfg.n);
  Eigen::VectorXd z(R);
  for (int i = 0; i < cfg.n; ++i) {
    for (int j = 0; j < dx; ++j) d.numeric(i, j) = rng.normal();
    for (int r = 0; r < R; ++r) z(r) = rng.normal();
    Eigen::Index k = 0;
    (selector * d.numeric.row(i).transpose()).maxCoeff(&k);
    for (int r = 0; r < R; ++r) {
      for (int j = 0; j < de; ++j) {
        d.semantic(i, r * de + j) = cfg.informative
                                        ? codes(r, j) + z(r) * u(j) + 0.05 * rng.normal()
                                        : rng.normal();
      }
    }
    const double latent = cfg.informative ? 2.0 * z(k) : 0.0;
    d.target(i) = d.numeric.row(i).dot(a) + latent + cfg.noise * rng.normal();
  }
  return d;
}

namespace {

std::int64_t mlp_params(std::int64_t in, std::int64_t h) { return in * h + h + h + 1; }

std::int64_t fusion_overhead(FusionMechanism m, std::int64_t dx, std::int64_t R, std::int64_t de,
                             std::int64_t da) {
  const std::int64_t lin = R * de * dx + dx;
  switch (m) {
    case FusionMechanism::kConcat: return 0;
    case FusionMechanism::kResidual: return lin;
    case FusionMechanism::kGated: return 2 * lin;
    case FusionMechanism::kFilm: return 2 * lin;
    case FusionMechanism::kCrossAttention:
      return (dx * da + da) + 2 * (de * da + da) + (da * dx + dx);
    case FusionMechanism::kNumericOnly: return 0;
  }
  return 0;
}

std::int64_t fusion_input_dim(FusionMechanism m, std::int64_t dx, std::int64_t R, std::int64_t de) {
  return m == FusionMechanism::kConcat ? dx + R * de : dx;
}

class FusionHead {
 public:
  FusionHead(FusionMechanism m, int dx, int R, int de, const FusionConfig& cfg)
      : m_(m), dx_(dx), R_(R), de_(de) {
    Rng rng(derive_seed(cfg.seed, "fusion-init"));
    const FusionShape shape = fusion_shape(m, dx, R, de, cfg);
    const int in = static_cast<int>(fusion_input_dim(m, dx, R, de));
    switch (m) {
      case FusionMechanism::kResidual:
        w1_ = Linear<float>(store_, "fuse.w", R * de, dx, rng);
        break;
      case FusionMechanism::kGated:
        w1_ = Linear<float>(store_, "fuse.gate", R * de, dx, rng);
        w2_ = Linear<float>(store_, "fuse.value", R * de, dx, rng);
        break;
      case FusionMechanism::kFilm:
        w1_ = Linear<float>(store_, "fuse.gamma", R * de, dx, rng);
        w2_ = Linear<float>(store_, "fuse.beta", R * de, dx, rng);
        break;
      case FusionMechanism::kCrossAttention:
        w1_ = Linear<float>(store_, "fuse.q", dx, cfg.attn_dim, rng);
        w2_ = Linear<float>(store_, "fuse.k", de, cfg.attn_dim, rng);
        w3_ = Linear<float>(store_, "fuse.v", de, cfg.attn_dim, rng);
        w4_ = Linear<float>(store_, "fuse.o", cfg.attn_dim, dx, rng);
        break;
      default: break;
    }
    fc1_ = Linear<float>(store_, "mlp.fc1", in, shape.hidden, rng);
    fc2_ = Linear<float>(store_, "mlp.fc2", shape.hidden, 1, rng);
  }

  Tensor<float> forward(const Tensor<float>& x, const Tensor<float>& e) const {
    const std::int64_t B = x.rows();
    Tensor<float> fused;
    switch (m_) {
      case FusionMechanism::kConcat: fused = concat_cols<float>({x, e}); break;
      case FusionMechanism::kResidual: fused = add(x, w1_(e)); break;
      case FusionMechanism::kGated: fused = add(x, mul(sigmoid(w1_(e)), w2_(e))); break;
      case FusionMechanism::kFilm: fused = add(mul(affine(w1_(e), 1.0f, 1.0f), x), w2_(e)); break;
      case FusionMechanism::kCrossAttention: {
        const Tensor<float> roles = reshape(e, {B * R_, de_});
        const Tensor<float> att =
            attention(w1_(x), w2_(roles), w3_(roles), B, 1, AttentionMask::kNone);
        fused = add(x, w4_(att));
        break;
      }
      case FusionMechanism::kNumericOnly: fused = x; break;
    }
    return fc2_(relu(fc1_(fused)));
  }

  ParamStore<float>& store() { return store_; }

 private:
  FusionMechanism m_;
  int dx_;
  int R_;
  int de_;
  ParamStore<float> store_;
  Linear<float> w1_, w2_, w3_, w4_;
  Linear<float> fc1_, fc2_;
};

Tensor<float> to_tensor(const Eigen::MatrixXd& M, const std::vector<Eigen::Index>& rows) {
  std::vector<float> v(rows.size() * static_cast<std::size_t>(M.cols()));
  std::size_t o = 0;
  for (Eigen::Index r : rows)
    for (Eigen::Index c = 0; c < M.cols(); ++c) v[o++] = static_cast<float>(M(r, c));
  return Tensor<float>::from({static_cast<std::int64_t>(rows.size()), M.cols()}, std::move(v));
}

}  // namespace

FusionShape fusion_shape(FusionMechanism m, int numeric_dim, int roles, int role_dim,
                         const FusionConfig& cfg) {
  const std::int64_t over = fusion_overhead(m, numeric_dim, roles, role_dim, cfg.attn_dim);
  const std::int64_t in = fusion_input_dim(m, numeric_dim, roles, role_dim);
  const double h = static_cast<double>(cfg.param_budget - over - 1) / static_cast<double>(in + 2);
  if (h < 1.0) {
    throw ConfigError(fmt::format("parameter budget {} too small for {}", cfg.param_budget, fusion_name(m)));
  }
  FusionShape s;
  s.hidden = static_cast<int>(std::lround(h));
  s.parameters = over + mlp_params(in, s.hidden);
  return s;
}

ProbeReport fusion_eval(const FusionData& data, FusionMechanism mechanism, const FusionConfig& cfg) {
  const auto n = data.numeric.rows();
  if (data.semantic.rows() != n || data.target.size() != n) {
    throw DomainError("fusion data rows disagree");
  }
  if (data.roles < 1 || data.semantic.cols() % data.roles != 0) {
    throw DomainError("semantic width is not a multiple of the role count");
  }
  if (n < 50) throw DomainError("fusion needs at least 50 samples");
  const int dx = static_cast<int>(data.numeric.cols());
  const int R = data.roles;
  const int de = static_cast<int>(data.semantic.cols()) / R;

  const auto perm = split_permutation(n, derive_seed(cfg.seed, "fusion-split"));
  const std::size_t n_train = perm.size() * 4 / 5;
  const std::vector<Eigen::Index> train(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  const std::vector<Eigen::Index> test(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());

  double ymu = 0.0;
  for (auto i : train) ymu += data.target(i);
  ymu /= static_cast<double>(train.size());
  double ysd = 0.0;
  for (auto i : train) ysd += (data.target(i) - ymu) * (data.target(i) - ymu);
  ysd = std::sqrt(ysd / static_cast<double>(train.size()));
  if (ysd == 0.0) ysd = 1.0;

  FusionHead head(mechanism, dx, R, de, cfg);
  AdamWConfig oc;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  AdamW<float> opt(head.store(), oc);
  const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), train.size());
  std::vector<Eigen::Index> rows(B);
  std::vector<float> yb(B);
  const std::vector<float> ones(B, 1.0f);
  const std::uint64_t root = derive_seed(cfg.seed, "fusion-batches");
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    Rng rng(derive_seed(root, static_cast<std::uint64_t>(step)));
    for (std::size_t b = 0; b < B; ++b) {
      rows[b] = train[rng.index(train.size())];
      yb[b] = static_cast<float>((data.target(rows[b]) - ymu) / ysd);
    }
    head.store().zero_grad();
    const Tensor<float> pred = head.forward(to_tensor(data.numeric, rows), to_tensor(data.semantic, rows));
    Tensor<float> loss = mse_loss(pred, std::span<const float>(yb), std::span<const float>(ones));
    loss.backward();
    opt.step();
  }

  NoGradGuard guard;
  const Tensor<float> out = head.forward(to_tensor(data.numeric, test), to_tensor(data.semantic, test));
  Eigen::VectorXd yte(static_cast<Eigen::Index>(test.size()));
  Eigen::VectorXd pred(yte.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    yte(static_cast<Eigen::Index>(i)) = data.target(test[i]);
    pred(static_cast<Eigen::Index>(i)) = ymu + ysd * static_cast<double>(out.data()[i]);
  }
  ProbeReport r;
  r.label = std::string(fusion_name(mechanism));
  r.n_train = static_cast<int>(train.size());
  r.n_test = static_cast<int>(test.size());
  r.r2 = r_squared(yte, pred);
  r.mse = (yte - pred).squaredNorm() / static_cast<double>(yte.size());
  r.mae = (yte - pred).cwiseAbs().mean();
  return r;
}

ProbeDataset make_probe_dataset(Scenario scenario, int n_trajectories, std::uint64_t seed,
                                const TextEncoder& encoder) {
  if (n_trajectories < 2) throw ConfigError("probe dataset needs at least two trajectories");
  BehaviorMix mix;
  mix.noisy_pid_weight = 1.0;
  mix.random_multiplier_weight = 0.0;
  mix.sample_target_cpa = false;
  const MarketConfig market = MarketConfig::preset(scenario, seed);
  const Dataset ds = generate_offline_dataset(market, mix, n_trajectories, seed);
  const SemanticConfig sem = SemanticConfig::for_scenario(scenario);

  std::size_t n = 0;
  for (const auto& tr : ds.trajectories) n += static_cast<std::size_t>(tr.length());
  ProbeDataset out;
  out.embeddings.resize(static_cast<Eigen::Index>(n), encoder.dim());
  out.features.resize(static_cast<Eigen::Index>(n), kStateDim);
  out.actions.resize(static_cast<Eigen::Index>(n));
  Eigen::Index row = 0;
  for (const auto& tr : ds.trajectories) {
    for (int t = 0; t < tr.length(); ++t) {
      const auto i = static_cast<std::size_t>(t);
      CampaignState st;
      st.period = t + 1;
      st.n_periods = ds.n_periods();
      st.budget = tr.budget;
      st.budget_left = tr.budget_left[i];
      st.target_cpa = tr.target_cpa;
      st.mean_pvalue = tr.mean_pvalue[i];
      for (int k = 0; k < kStateDim; ++k) st.features[k] = tr.states[i][k];
      out.texts.push_back(render_state_text(st, sem));
      const EmbeddingVector v = encoder.encode(out.texts.back());
      for (int k = 0; k < v.dim(); ++k) out.embeddings(row, k) = v.values[static_cast<std::size_t>(k)];
      for (int k = 0; k < kStateDim; ++k) out.features(row, k) = tr.states[i][k];
      out.actions(row) = tr.actions[i];
      ++row;
    }
  }
  return out;
}

namespace {

ProbeReport average(const std::vector<ProbeReport>& rs) {
  ProbeReport m;
  m.label = rs.front().label;
  m.n_train = rs.front().n_train;
  m.n_test = rs.front().n_test;
  for (const auto& r : rs) {
    m.r2 += r.r2 / static_cast<double>(rs.size());
    m.mse += r.mse / static_cast<double>(rs.size());
    m.mae += r.mae / static_cast<double>(rs.size());
    m.degenerate = m.degenerate || r.degenerate;
  }
  return m;
}

Eigen::MatrixXd encode_rows(const std::vector<std::string>& texts, const TextEncoder& encoder) {
  Eigen::MatrixXd M(static_cast<Eigen::Index>(texts.size()), encoder.dim());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const EmbeddingVector v = encoder.encode(texts[i]);
    for (int k = 0; k < v.dim(); ++k) M(static_cast<Eigen::Index>(i), k) = v.values[static_cast<std::size_t>(k)];
  }
  return M;
}

}  // namespace

ProbeStudy run_probe_study(const ProbeStudyConfig& cfg, const TextEncoder& encoder) {
  if (cfg.n_seeds < 1) throw ConfigError("probe study needs at least one seed");
  ProbeStudy study;
  std::vector<std::vector<ProbeReport>> by_label;
  for (int s = 0; s < cfg.n_seeds; ++s) {
    const std::uint64_t seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(s));
    const ProbeDataset pd = make_probe_dataset(cfg.scenario, cfg.n_trajectories, seed, encoder);
    const auto n = pd.embeddings.rows();

    std::vector<EmbeddingVector> vecs(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& v = vecs[static_cast<std::size_t>(i)].values;
      for (Eigen::Index k = 0; k < pd.embeddings.cols(); ++k) v.push_back(static_cast<float>(pd.embeddings(i, k)));
    }
    const auto shuffled = shuffle_pairings(pd.texts, vecs, seed);
    Eigen::MatrixXd Xs(n, pd.embeddings.cols());
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < Xs.cols(); ++k) Xs(i, k) = shuffled[static_cast<std::size_t>(i)].values[static_cast<std::size_t>(k)];

    Rng noise_rng(derive_seed(seed, "probe-noise"));
    Eigen::MatrixXd Xr(n, pd.embeddings.cols());
    for (Eigen::Index i = 0; i < Xr.size(); ++i) Xr.data()[i] = noise_rng.normal();

    std::vector<ProbeReport> rows = {
        linear_probe(pd.embeddings, pd.actions, seed, 1e-3, "text_embedding:aligned"),
        linear_probe(Xs, pd.actions, seed, 1e-3, "text_embedding:shuffled"),
        linear_probe(Xr, pd.actions, seed, 1e-3, "random_embedding:aligned"),
        linear_probe(pd.features, pd.actions, seed, 1e-3, "numeric_state:aligned"),
    };
    if (by_label.empty()) by_label.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) by_label[i].push_back(rows[i]);
    study.per_seed.push_back(rows);
  }
  for (const auto& v : by_label) study.probes.push_back(average(v));

  // Per-category CCA between prompt embeddings of the same steps.
  {
    BehaviorMix mix;
    const MarketConfig market = MarketConfig::preset(cfg.scenario, cfg.seed);
    const int n_traj = std::max(2, cfg.cca_samples / market.n_periods + 1);
    const Dataset ds = generate_offline_dataset(market, mix, n_traj, derive_seed(cfg.seed, "cca"));
    SemanticConfig sem = SemanticConfig::for_scenario(cfg.scenario);
    sem.template_seed = derive_seed(cfg.seed, "templates");
    std::array<std::vector<std::string>, 3> texts;
    for (const auto& tr : ds.trajectories) {
      Rng rng(derive_seed(sem.template_seed, tr.seed));
      VariantSelector sel(rng);
      const auto history = trajectory_telemetry(tr, tr.length());
      for (int t = 0; t < tr.length(); ++t) {
        if (static_cast<int>(texts[0].size()) >= cfg.cca_samples) break;
        const auto i = static_cast<std::size_t>(t);
        StepContext ctx;
        ctx.target_cpa = tr.target_cpa;
        ctx.mean_pvalue = tr.mean_pvalue[i];
        ctx.budget_ratio = tr.budget_left[i] / tr.budget;
        ctx.history = std::span<const PeriodTelemetry>(history.data(), i);
        const SemanticTokenSet tok = generate_semantic_tokens(ctx, sem, sel);
        texts[0].push_back(tok.task.text);
        texts[1].push_back(tok.history.text);
        texts[2].push_back(tok.strategy.text);
      }
    }
    const Eigen::MatrixXd Et = encode_rows(texts[0], encoder);
    const Eigen::MatrixXd Eh = encode_rows(texts[1], encoder);
    const Eigen::MatrixXd Es = encode_rows(texts[2], encoder);
    study.cca.emplace_back("task:history", canonical_correlations(Et, Eh, cfg.cca_k));
    study.cca.emplace_back("task:strategy", canonical_correlations(Et, Es, cfg.cca_k));
    study.cca.emplace_back("history:strategy", canonical_correlations(Eh, Es, cfg.cca_k));
  }

  if (cfg.run_fusion) {
    std::vector<std::vector<ProbeReport>> fused(std::size(kAllFusions) + 2);
    for (int s = 0; s < cfg.fusion_seeds; ++s) {
      const std::uint64_t seed = derive_seed(derive_seed(cfg.seed, "fusion"), static_cast<std::uint64_t>(s));
      FusionConfig fc = cfg.fusion;
      fc.seed = seed;
      FusionTaskConfig tc = cfg.fusion_task;
      tc.informative = true;
      const FusionData informative = make_fusion_task(tc, seed);
      std::size_t j = 0;
      for (FusionMechanism m : kAllFusions) fused[j++].push_back(fusion_eval(informative, m, fc));
      tc.informative = false;
      const FusionData noise = make_fusion_task(tc, seed);
      for (FusionMechanism m : {FusionMechanism::kCrossAttention, FusionMechanism::kNumericOnly}) {
        ProbeReport r = fusion_eval(noise, m, fc);
        r.label = "noise:" + r.label;
        fused[j++].push_back(r);
      }
    }
    for (const auto& v : fused) study.fusion.push_back(average(v));
  }
  return study;
}

std::string ProbeStudy::probes_csv() const {
  std::string out = "input,control,r2,mse,mae,n_train,n_test,degenerate\n";
  for (const auto& r : probes) {
    const auto colon = r.label.find(':');
    out += fmt::format("{},{},{:.9g},{:.9g},{:.9g},{},{},{}\n", r.label.substr(0, colon),
                       r.label.substr(colon + 1), r.r2, r.mse, r.mae, r.n_train, r.n_test,
                       r.degenerate ? 1 : 0);
  }
  return out;
}

std::string ProbeStudy::fusion_csv() const {
  std::string out = "mechanism,r2,mse,mae,n_train,n_test\n";
  for (const auto& r : fusion)
    out += fmt::format("{},{:.9g},{:.9g},{:.9g},{},{}\n", r.label, r.r2, r.mse, r.mae, r.n_train, r.n_test);
  return out;
}

nlohmann::json ProbeStudy::to_json() const {
  nlohmann::json j;
  j["schema"] = "sembid-probe";
  j["version"] = 1;
  const auto row = [](const ProbeReport& r) {
    return nlohmann::json{{"label", r.label}, {"r2", r.r2},           {"mse", r.mse},
                          {"mae", r.mae},     {"n_train", r.n_train}, {"n_test", r.n_test},
                          {"degenerate", r.degenerate}};
  };
  j["probes"] = nlohmann::json::array();
  for (const auto& r : probes) j["probes"].push_back(row(r));
  j["cca"] = nlohmann::json::array();
  for (const auto& [name, c] : cca) {
    j["cca"].push_back({{"pair", name}, {"mean", c.mean()}, {"k_used", c.k_used},
                        {"reduced", c.reduced}, {"correlations", c.correlations}});
  }
  j["fusion"] = nlohmann::json::array();
  for (const auto& r : fusion) j["fusion"].push_back(row(r));
  return j;
}

}  // namespace sembid
