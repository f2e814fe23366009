#include "fedlr/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

#include "fedlr/parallel.hpp"

namespace fedlr {

std::string method_name(Method m) {
  switch (m) {
    case Method::kFedMf: return "fedmf";
    case Method::kColr: return "colr";
    case Method::kScolr: return "scolr";
    case Method::kFedMfTopk: return "fedmf_topk";
    case Method::kFedMfSvd: return "fedmf_svd";
  }
  throw ConfigError("method_name: unknown enum value");
}

Method method_from_name(const std::string& name) {
  if (name == "fedmf") return Method::kFedMf;
  if (name == "colr") return Method::kColr;
  if (name == "scolr") return Method::kScolr;
  if (name == "fedmf_topk") return Method::kFedMfTopk;
  if (name == "fedmf_svd") return Method::kFedMfSvd;
  throw ConfigError("unknown method: " + name);
}

// ===== cohort sampling =====

CohortSampler::CohortSampler(int population, double fraction, std::uint64_t seed)
    : population_(population), seed_(seed) {
  if (population < 1) throw ConfigError("cohort sampler: empty population");
  if (!(fraction > 0.0) || fraction > 1.0)
    throw ConfigError("cohort_fraction must lie in (0, 1]");
  // the epsilon keeps exact products like 0.1 * 100 from ceiling to 11
  m_ = static_cast<int>(std::ceil(fraction * population - 1e-9));
  m_ = std::clamp(m_, 1, population);
  perm_.resize(population);
  std::iota(perm_.begin(), perm_.end(), 0);
  cursor_ = perm_.size();  // force a reshuffle on the first draw
}

void CohortSampler::reshuffle() {
  Rng rng = Rng::keyed(seed_, purpose::kCohort, epoch_);
  rng.shuffle(perm_);
  cursor_ = 0;
  ++epoch_;
}

std::vector<int> CohortSampler::next() {
  std::vector<int> out;
  out.reserve(m_);
  auto drawn = [&](int user) { return std::find(out.begin(), out.end(), user) != out.end(); };
  while (static_cast<int>(out.size()) < m_) {
    if (cursor_ == perm_.size()) reshuffle();
    if (drawn(perm_[cursor_])) {
      // epoch boundary repeat; swap forward to the next unseen user
      std::size_t j = cursor_ + 1;
      while (j < perm_.size() && drawn(perm_[j])) ++j;
      if (j == perm_.size())
        throw TrainError("cohort sampler: no unseen user left in the permutation");
      std::swap(perm_[cursor_], perm_[j]);
    }
    out.push_back(perm_[cursor_]);
    ++cursor_;
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> sample_cohort(int population, double fraction, std::uint64_t seed, int round) {
  if (round < 0) throw ConfigError("sample_cohort: negative round");
  CohortSampler sampler(population, fraction, seed);
  std::vector<int> out;
  for (int t = 0; t <= round; ++t) out = sampler.next();
  return out;
}

// ===== aggregation =====

Eigen::MatrixXd aggregate_weighted(const std::vector<double>& weights,
                                   const std::vector<Eigen::MatrixXd>& updates, double norm) {
  if (updates.empty() || weights.size() != updates.size())
    throw TrainError("aggregate_weighted: empty cohort or weight/update length mismatch");
  if (!(norm > 0.0)) throw TrainError("aggregate_weighted: normalizer must be positive");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(updates.front().rows(), updates.front().cols());
  for (std::size_t i = 0; i < updates.size(); ++i) {
    if (updates[i].rows() != out.rows() || updates[i].cols() != out.cols())
      throw TrainError("aggregate_weighted: update shape mismatch");
    out.noalias() += weights[i] * updates[i];
  }
  out /= norm;
  return out;
}

Eigen::MatrixXd aggregate_scolr(const std::vector<ScolrContribution>& parts, int r_g,
                                int n_items, double norm, bool per_row_norm) {
  if (parts.empty()) throw TrainError("aggregate_scolr: empty cohort");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(r_g, n_items);
  Eigen::VectorXd row_mass = Eigen::VectorXd::Zero(r_g);
  for (const auto& part : parts) {
    if (part.sel.r_g != r_g || part.a.rows() != part.sel.r_u() || part.a.cols() != n_items)
      throw TrainError("aggregate_scolr: contribution shape mismatch");
    for (int k = 0; k < part.sel.r_u(); ++k) {
      out.row(part.sel.rows[k]) += part.weight * part.a.row(k);
      row_mass[part.sel.rows[k]] += part.weight;
    }
  }
  if (per_row_norm) {
    for (int j = 0; j < r_g; ++j)
      if (row_mass[j] > 0.0) out.row(j) /= row_mass[j];
  } else {
    if (!(norm > 0.0)) throw TrainError("aggregate_scolr: normalizer must be positive");
    out /= norm;
  }
  return out;
}

// ===== traffic ledger =====

void PayloadLedger::record(int round, const std::string& method, const RoundTraffic& traffic) {
  cum_up_ += traffic.up_total;
  cum_down_ += traffic.down_total;
  rows_.push_back(LedgerRow{round, method, traffic.cohort, traffic.up_max, traffic.down_max,
                            traffic.up_total, traffic.down_total, cum_up_, cum_down_});
}

std::string PayloadLedger::to_csv() const {
  std::ostringstream os;
  os << "round,method,cohort,up_bytes,down_bytes,up_total_bytes,down_total_bytes,"
        "cum_up_bytes,cum_down_bytes\n";
  for (const auto& r : rows_) {
    os << r.round << ',' << r.method << ',' << r.cohort << ',' << r.up_max << ',' << r.down_max
       << ',' << r.up_total << ',' << r.down_total << ',' << r.cum_up << ',' << r.cum_down
       << '\n';
  }
  return os.str();
}

// ===== simulator =====

namespace {

std::vector<std::vector<double>> weighted_flat(const std::vector<double>& weights,
                                               const std::vector<Eigen::MatrixXd>& updates,
                                               double norm) {
  std::vector<std::vector<double>> out(updates.size());
  for (std::size_t i = 0; i < updates.size(); ++i) {
    const auto& m = updates[i];
    out[i].resize(static_cast<std::size_t>(m.size()));
    Eigen::Map<Eigen::VectorXd>(out[i].data(), m.size()) =
        (weights[i] / norm) * Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
  }
  return out;
}

Eigen::MatrixXd unflatten(const std::vector<double>& flat, Eigen::Index rows,
                          Eigen::Index cols) {
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols)
    throw TrainError("secure aggregate returned a vector of the wrong length");
  return Eigen::Map<const Eigen::MatrixXd>(flat.data(), rows, cols);
}

std::int64_t topk_kept_entries(double fraction, std::int64_t total) {
  return std::min<std::int64_t>(
      total, static_cast<std::int64_t>(std::ceil(fraction * static_cast<double>(total))));
}

}  // namespace

Simulator::Simulator(const EvalSplit& split, const RoundConfig& cfg, const LocalConfig& local,
                     int d, double init_std, const SimulatorOptions& opts)
    : split_(&split),
      cfg_(cfg),
      local_(local),
      opts_(opts),
      sampler_(split.train.num_users(), cfg.cohort_fraction, cfg.seed) {
  const int n = split.train.num_items();
  const int users = split.train.num_users();
  if (d < 1) throw ConfigError("model dimension must be positive");
  if (n < 1) throw ConfigError("simulator: split has no items");
  opts_.workers = std::max(1, opts_.workers);

  const bool low_rank = cfg_.method == Method::kColr || cfg_.method == Method::kScolr ||
                        cfg_.method == Method::kFedMfSvd;
  if (low_rank && (cfg_.rank < 1 || cfg_.rank > d))
    throw ConfigError("rank must lie in [1, d]");
  if (cfg_.method == Method::kFedMfTopk &&
      (!(cfg_.topk_fraction > 0.0) || cfg_.topk_fraction > 1.0))
    throw ConfigError("topk_fraction must lie in (0, 1]");
  if (cfg_.method == Method::kScolr) {
    if (cfg_.local_rank == 0) cfg_.local_rank = cfg_.rank;
    if (cfg_.local_rank < 1 || cfg_.local_rank > cfg_.rank)
      throw ConfigError("local_rank must lie in [1, rank]");
  }
  if (cfg_.secure.mode != SecureMode::kOff) {
    if (cfg_.method != Method::kFedMf && cfg_.method != Method::kColr)
      throw ConfigError("secure aggregation supports the fedmf and colr uplinks only");
    cfg_.secure.codec.validate();
    keys_ = paillier_keygen(cfg_.secure.key_bits, cfg_.seed);
  }

  server_.model = init_model(d, n, init_std, cfg_.seed);
  pool_.clients.resize(users);
  for (int u = 0; u < users; ++u) {
    pool_.clients[u].user = u;
    pool_.clients[u].p = init_user_embedding(d, init_std, cfg_.seed, u);
  }
  for (int u = 0; u < users; ++u)
    population_weight_ += static_cast<double>(split.train.interactions(u).size());
}

double Simulator::agg_norm_for(const std::vector<double>& weights) const {
  if (cfg_.agg_norm == AggNorm::kPopulation) return population_weight_;
  return std::accumulate(weights.begin(), weights.end(), 0.0);
}

RankProbe Simulator::probe_from(std::vector<std::pair<int, int>>& ranks) const {
  RankProbe p;
  const double c = static_cast<double>(ranks.size());
  double s95 = 0, q95 = 0, s99 = 0, q99 = 0;
  for (const auto& [r95, r99] : ranks) {
    s95 += r95;
    q95 += static_cast<double>(r95) * r95;
    s99 += r99;
    q99 += static_cast<double>(r99) * r99;
  }
  p.mean95 = s95 / c;
  p.std95 = std::sqrt(std::max(0.0, q95 / c - p.mean95 * p.mean95));
  p.mean99 = s99 / c;
  p.std99 = std::sqrt(std::max(0.0, q99 / c - p.mean99 * p.mean99));
  return p;
}

RoundResult Simulator::run_dense_family(const std::vector<int>& cohort) {
  const int c = static_cast<int>(cohort.size());
  const int t = server_.round;
  const int d = server_.model.d();
  const int n = server_.model.n_items();

  std::vector<Eigen::MatrixXd> updates(c);
  std::vector<double> weights(c);
  std::vector<std::pair<int, int>> ranks(opts_.rank_probe ? c : 0);
  std::vector<Eigen::MatrixXd> kept(opts_.keep_updates ? c : 0);

  parallel_for(static_cast<std::size_t>(c), opts_.workers, [&](std::size_t i) {
    const int u = cohort[i];
    Rng shuffle = Rng::keyed(cfg_.seed, purpose::kTrainShuffle, t, u);
    Rng neg = Rng::keyed(cfg_.seed, purpose::kTrainNeg, t, u);
    DenseResult local =
        local_train_dense(pool_.clients[u], server_.model, split_->train, local_, shuffle, neg);
    weights[i] = static_cast<double>(split_->train.interactions(u).size());
    if (opts_.rank_probe)
      ranks[i] = {effective_rank(local.delta_q, 0.95), effective_rank(local.delta_q, 0.99)};
    if (opts_.keep_updates) kept[i] = local.delta_q;
    switch (cfg_.method) {
      case Method::kFedMfTopk:
        updates[i] = topk_decompress(topk_compress(local.delta_q, cfg_.topk_fraction));
        break;
      case Method::kFedMfSvd:
        updates[i] = svd_reconstruct(svd_truncate(local.delta_q, cfg_.rank));
        break;
      default:
        updates[i] = std::move(local.delta_q);
    }
  });

  const double norm = agg_norm_for(weights);
  RoundResult res;
  Eigen::MatrixXd agg;
  if (cfg_.method == Method::kFedMf && cfg_.secure.mode != SecureMode::kOff) {
    const auto sums =
        secure_aggregate(weighted_flat(weights, updates, norm), cfg_.secure.mode,
                         cfg_.secure.codec, cfg_.secure.slots_per_block, keys_, cfg_.seed,
                         static_cast<std::uint64_t>(t), &res.he);
    res.he_valid = true;
    agg = unflatten(sums, d, n);
  } else {
    agg = aggregate_weighted(weights, updates, norm);
    // the downlink travels through the same codec as the uplink
    if (cfg_.method == Method::kFedMfTopk)
      agg = topk_decompress(topk_compress(agg, cfg_.topk_fraction));
    else if (cfg_.method == Method::kFedMfSvd)
      agg = svd_reconstruct(svd_truncate(agg, cfg_.rank));
  }
  server_.model.q.noalias() += cfg_.server_lr * agg;

  PayloadDims dims;
  dims.d = d;
  dims.n = n;
  dims.r = cfg_.rank;
  std::uint64_t per = 0;
  switch (cfg_.method) {
    case Method::kFedMfTopk:
      dims.k = topk_kept_entries(cfg_.topk_fraction, static_cast<std::int64_t>(d) * n);
      per = payload_bytes(PayloadKind::kSparseFlat, dims, cfg_.value_width, cfg_.index_width);
      break;
    case Method::kFedMfSvd:
      per = payload_bytes(PayloadKind::kSvd, dims, cfg_.value_width, cfg_.index_width);
      break;
    default:
      per = payload_bytes(PayloadKind::kDense, dims, cfg_.value_width, cfg_.index_width);
  }
  res.traffic = RoundTraffic{per, per, per * c, per * c, c};
  if (opts_.rank_probe) {
    res.probe = probe_from(ranks);
    res.probe_valid = true;
  }
  res.updates = std::move(kept);
  return res;
}

RoundResult Simulator::run_colr(const std::vector<int>& cohort) {
  const int c = static_cast<int>(cohort.size());
  const int t = server_.round;
  const int d = server_.model.d();
  const int n = server_.model.n_items();
  const int r = cfg_.rank;

  const Eigen::MatrixXd b = sample_b(ProjectionSpec{d, r, cfg_.seed}, t);
  LocalConfig eff = local_;
  eff.item_lr = scaled_lr(local_.item_lr, r, d, cfg_.lr_scaling);

  std::vector<Eigen::MatrixXd> coeffs(c);
  std::vector<double> weights(c);
  std::vector<std::pair<int, int>> ranks(opts_.rank_probe ? c : 0);
  std::vector<Eigen::MatrixXd> kept(opts_.keep_updates ? c : 0);

  parallel_for(static_cast<std::size_t>(c), opts_.workers, [&](std::size_t i) {
    const int u = cohort[i];
    Rng shuffle = Rng::keyed(cfg_.seed, purpose::kTrainShuffle, t, u);
    Rng neg = Rng::keyed(cfg_.seed, purpose::kTrainNeg, t, u);
    LowRankResult local =
        local_train_lowrank(pool_.clients[u], server_.model, b, split_->train, eff, shuffle, neg);
    weights[i] = static_cast<double>(split_->train.interactions(u).size());
    if (opts_.rank_probe || opts_.keep_updates) {
      Eigen::MatrixXd dense_eq = b * local.a;
      if (opts_.rank_probe)
        ranks[i] = {effective_rank(dense_eq, 0.95), effective_rank(dense_eq, 0.99)};
      if (opts_.keep_updates) kept[i] = std::move(dense_eq);
    }
    coeffs[i] = std::move(local.a);
  });

  const double norm = agg_norm_for(weights);
  RoundResult res;
  Eigen::MatrixXd a_bar;
  if (cfg_.secure.mode != SecureMode::kOff) {
    const auto sums =
        secure_aggregate(weighted_flat(weights, coeffs, norm), cfg_.secure.mode,
                         cfg_.secure.codec, cfg_.secure.slots_per_block, keys_, cfg_.seed,
                         static_cast<std::uint64_t>(t), &res.he);
    res.he_valid = true;
    a_bar = unflatten(sums, r, n);
  } else {
    a_bar = aggregate_weighted(weights, coeffs, norm);
  }
  merge_global(server_.model.q, b, a_bar, cfg_.server_lr);

  const std::uint64_t coeff_bytes =
      static_cast<std::uint64_t>(r) * n * static_cast<std::uint64_t>(cfg_.value_width);
  const std::uint64_t seed_bytes =
      payload_bytes(PayloadKind::kSeed, PayloadDims{}, cfg_.value_width, cfg_.index_width);
  // round 0 only seeds the projection; later rounds also carry the aggregate
  const std::uint64_t down = t == 0 ? seed_bytes : seed_bytes + coeff_bytes;
  res.traffic = RoundTraffic{coeff_bytes, down, coeff_bytes * c, down * c, c};
  if (opts_.rank_probe) {
    res.probe = probe_from(ranks);
    res.probe_valid = true;
  }
  res.updates = std::move(kept);
  return res;
}

RoundResult Simulator::run_scolr(const std::vector<int>& cohort) {
  const int c = static_cast<int>(cohort.size());
  const int t = server_.round;
  const int d = server_.model.d();
  const int n = server_.model.n_items();
  const int r_g = cfg_.rank;

  const Eigen::MatrixXd b = sample_b(ProjectionSpec{d, r_g, cfg_.seed}, t);
  LocalConfig eff = local_;
  // compensation tracks the shared projection's width, not the local slice
  eff.item_lr = scaled_lr(local_.item_lr, r_g, d, cfg_.lr_scaling);

  std::vector<ScolrContribution> parts(c);
  std::vector<std::uint64_t> up_bytes(c);
  std::vector<std::pair<int, int>> ranks(opts_.rank_probe ? c : 0);
  std::vector<Eigen::MatrixXd> kept(opts_.keep_updates ? c : 0);

  parallel_for(static_cast<std::size_t>(c), opts_.workers, [&](std::size_t i) {
    const int u = cohort[i];
    int r_u = cfg_.local_rank;
    if (cfg_.rank_sampler == LocalRankSampler::kUniform) {
      Rng rank_rng = Rng::keyed(cfg_.seed, purpose::kLocalRank, t, u);
      r_u = 1 + static_cast<int>(rank_rng.next_below(static_cast<std::uint64_t>(r_g)));
    }
    Rng sel_rng = Rng::keyed(cfg_.seed, purpose::kSelection, t, u);
    ScolrContribution part;
    part.sel = sample_selection(r_g, r_u, sel_rng);
    const Eigen::MatrixXd b_sel = selected_columns(b, part.sel);
    Rng shuffle = Rng::keyed(cfg_.seed, purpose::kTrainShuffle, t, u);
    Rng neg = Rng::keyed(cfg_.seed, purpose::kTrainNeg, t, u);
    LowRankResult local = local_train_lowrank(pool_.clients[u], server_.model, b_sel,
                                              split_->train, eff, shuffle, neg);
    part.weight = static_cast<double>(split_->train.interactions(u).size());
    part.a = std::move(local.a);
    if (opts_.rank_probe || opts_.keep_updates) {
      Eigen::MatrixXd dense_eq = b_sel * part.a;
      if (opts_.rank_probe)
        ranks[i] = {effective_rank(dense_eq, 0.95), effective_rank(dense_eq, 0.99)};
      if (opts_.keep_updates) kept[i] = std::move(dense_eq);
    }
    up_bytes[i] = static_cast<std::uint64_t>(r_u) * n * cfg_.value_width +
                  static_cast<std::uint64_t>(r_u) * cfg_.index_width;
    parts[i] = std::move(part);
  });

  std::vector<double> weights(c);
  for (int i = 0; i < c; ++i) weights[i] = parts[i].weight;
  const double norm = agg_norm_for(weights);
  const Eigen::MatrixXd a_bar = aggregate_scolr(parts, r_g, n, norm, cfg_.scolr_row_norm);
  merge_global(server_.model.q, b, a_bar, cfg_.server_lr);

  RoundResult res;
  const std::uint64_t seed_bytes =
      payload_bytes(PayloadKind::kSeed, PayloadDims{}, cfg_.value_width, cfg_.index_width);
  const std::uint64_t coeff_bytes =
      static_cast<std::uint64_t>(r_g) * n * static_cast<std::uint64_t>(cfg_.value_width);
  const std::uint64_t down = t == 0 ? seed_bytes : seed_bytes + coeff_bytes;
  res.traffic.cohort = c;
  res.traffic.down_max = down;
  res.traffic.down_total = down * c;
  for (int i = 0; i < c; ++i) {
    res.traffic.up_max = std::max(res.traffic.up_max, up_bytes[i]);
    res.traffic.up_total += up_bytes[i];
  }
  if (opts_.rank_probe) {
    res.probe = probe_from(ranks);
    res.probe_valid = true;
  }
  res.updates = std::move(kept);
  return res;
}

RoundResult Simulator::run_round() {
  const std::vector<int> cohort = sampler_.next();
  RoundResult res;
  switch (cfg_.method) {
    case Method::kFedMf:
    case Method::kFedMfTopk:
    case Method::kFedMfSvd:
      res = run_dense_family(cohort);
      break;
    case Method::kColr:
      res = run_colr(cohort);
      break;
    case Method::kScolr:
      res = run_scolr(cohort);
      break;
  }
  res.round = server_.round;
  res.cohort = cohort;
  server_.ledger.record(server_.round, method_name(cfg_.method), res.traffic);
  ++server_.round;
  return res;
}

double Simulator::score(int user, int item) const {
  return pool_.clients.at(user).p.dot(server_.model.q.col(item));
}

EvalResult Simulator::evaluate(int k, EvalTarget target) const {
  return fedlr::evaluate(
      *split_, [this](int u, int i) { return score(u, i); }, k, opts_.workers, target);
}

}  // namespace fedlr
