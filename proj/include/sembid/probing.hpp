#ifndef SEMBID_PROBING_HPP_
#define SEMBID_PROBING_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "sembid/auction_env.hpp"
#include "sembid/embedding.hpp"

namespace sembid {

struct ProbeReport {
  std::string label;
  double r2 = 0.0;
  double mse = 0.0;
  double mae = 0.0;
  int n_train = 0;
  int n_test = 0;
  bool degenerate = false;  // constant target; r2 reported as 0
};

// Ridge regression (intercept unpenalized) on a seeded 80/20 split; metrics
// on the held-out rows. Sparse inputs take a sparse Gram path.
ProbeReport linear_probe(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         std::uint64_t split_seed, double ridge = 1e-3,
                         std::string label = {});

// 1 - SS_res / SS_tot; 0 when SS_tot == 0.
double r_squared(const Eigen::VectorXd& y, const Eigen::VectorXd& pred);

struct CcaResult {
  std::vector<double> correlations;  // sorted non-increasing, each in [0, 1]
  int k_requested = 0;
  int k_used = 0;
  bool reduced = false;  // rank deficiency forced k down
  double mean() const;
};

CcaResult canonical_correlations(const Eigen::MatrixXd& Xa, const Eigen::MatrixXd& Xb, int k);
double cca_avg(const Eigen::MatrixXd& Xa, const Eigen::MatrixXd& Xb, int k);

enum class FusionMechanism { kConcat, kResidual, kGated, kCrossAttention, kFilm, kNumericOnly };
FusionMechanism parse_fusion(std::string_view name);
std::string_view fusion_name(FusionMechanism m);
inline constexpr FusionMechanism kAllFusions[] = {
    FusionMechanism::kConcat, FusionMechanism::kResidual,       FusionMechanism::kGated,
    FusionMechanism::kFilm,   FusionMechanism::kCrossAttention, FusionMechanism::kNumericOnly};

// Numeric features X [n, dx]; semantic channel as n samples of `roles`
// vectors of width de, stored row-major as E [n, roles * de].
struct FusionData {
  Eigen::MatrixXd numeric;
  Eigen::MatrixXd semantic;
  Eigen::VectorXd target;
  int roles = 1;
};

struct FusionTaskConfig {
  int n = 3000;
  int numeric_dim = 8;
  int roles = 3;
  int role_dim = 16;
  double noise = 0.1;
  bool informative = true;  // false: semantic channel is pure noise and y drops the latent term
};

// y = a.x + 2 z_k + noise, where the role k is picked by x and z_k is a
// latent only the role-k semantic vector carries. Each role vector also
// carries a fixed role code so attention can address it. The uninformative
// variant draws every semantic entry iid N(0, 1) and sets y = a.x + noise.
FusionData make_fusion_task(const FusionTaskConfig& cfg, std::uint64_t seed);

struct FusionConfig {
  int param_budget = 2400;  // each head is sized to within +-10% of this
  int attn_dim = 8;
  std::int64_t steps = 1500;
  int batch_size = 128;
  double lr = 3e-3;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
};

// Hidden width and total parameters of the head for a mechanism.
struct FusionShape {
  int hidden = 0;
  std::int64_t parameters = 0;
};
FusionShape fusion_shape(FusionMechanism m, int numeric_dim, int roles, int role_dim,
                         const FusionConfig& cfg);

ProbeReport fusion_eval(const FusionData& data, FusionMechanism mechanism, const FusionConfig& cfg);

// Verbalized states of logged episodes, their encoder embeddings and the
// behavior action, for the linear-probing study.
struct ProbeDataset {
  std::vector<std::string> texts;
  Eigen::MatrixXd embeddings;  // [n, encoder dim]
  Eigen::MatrixXd features;    // [n, 16] numeric state
  Eigen::VectorXd actions;
};

ProbeDataset make_probe_dataset(Scenario scenario, int n_trajectories, std::uint64_t seed,
                                const TextEncoder& encoder);

struct ProbeStudyConfig {
  Scenario scenario = Scenario::kHigh;
  int n_trajectories = 120;
  int n_seeds = 10;
  std::uint64_t seed = 0;
  int cca_k = 10;
  int cca_samples = 1000;
  FusionConfig fusion;
  FusionTaskConfig fusion_task;
  bool run_fusion = true;
  int fusion_seeds = 3;
};

struct ProbeStudy {
  std::vector<ProbeReport> probes;                       // mean over seeds, per label
  std::vector<std::pair<std::string, CcaResult>> cca;  // per category pair
  std::vector<ProbeReport> fusion;                       // mean over seeds, per mechanism label
  std::vector<std::vector<ProbeReport>> per_seed;        // probe rows of each seed

  std::string probes_csv() const;
  std::string fusion_csv() const;
  nlohmann::json to_json() const;
};

ProbeStudy run_probe_study(const ProbeStudyConfig& cfg, const TextEncoder& encoder);

}  // namespace sembid

#endif  // SEMBID_PROBING_HPP_
