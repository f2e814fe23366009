#include "fedlr/experiment.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace fedlr {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

bool parse_bool(const std::string& v, const std::string& field) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(field + " must be true or false, got '" + v + "'");
}

long long parse_int(const std::string& v, const std::string& field) {
  errno = 0;
  char* end = nullptr;
  const long long out = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE)
    throw ConfigError(field + " must be an integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& v, const std::string& field) {
  errno = 0;
  char* end = nullptr;
  if (!v.empty() && v.front() == '-')
    throw ConfigError(field + " must be a non-negative integer, got '" + v + "'");
  const unsigned long long out = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE)
    throw ConfigError(field + " must be a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v, const std::string& field) {
  errno = 0;
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE)
    throw ConfigError(field + " must be a number, got '" + v + "'");
  return out;
}

RatingsFormat format_from_name(const std::string& v, const std::string& field) {
  if (v == "double_colon") return RatingsFormat::kDoubleColon;
  if (v == "tab") return RatingsFormat::kTab;
  throw ConfigError(field + " must be double_colon or tab, got '" + v + "'");
}

std::string format_name(RatingsFormat f) {
  return f == RatingsFormat::kDoubleColon ? "double_colon" : "tab";
}

LocalRankSampler sampler_from_name(const std::string& v, const std::string& field) {
  if (v == "fixed") return LocalRankSampler::kFixed;
  if (v == "uniform") return LocalRankSampler::kUniform;
  throw ConfigError(field + " must be fixed or uniform, got '" + v + "'");
}

std::string sampler_name(LocalRankSampler s) {
  return s == LocalRankSampler::kFixed ? "fixed" : "uniform";
}

DecayMode decay_from_name(const std::string& v, const std::string& field) {
  if (v == "touched") return DecayMode::kTouched;
  if (v == "full") return DecayMode::kFull;
  throw ConfigError(field + " must be touched or full, got '" + v + "'");
}

std::string decay_name(DecayMode m) { return m == DecayMode::kTouched ? "touched" : "full"; }

AggNorm agg_norm_from_name(const std::string& v, const std::string& field) {
  if (v == "cohort") return AggNorm::kCohort;
  if (v == "population") return AggNorm::kPopulation;
  throw ConfigError(field + " must be cohort or population, got '" + v + "'");
}

std::string agg_norm_name(AggNorm n) { return n == AggNorm::kCohort ? "cohort" : "population"; }

SecureMode secure_mode_from_name(const std::string& v, const std::string& field) {
  if (v == "off") return SecureMode::kOff;
  if (v == "element") return SecureMode::kPerElement;
  if (v == "packed") return SecureMode::kPacked;
  throw ConfigError(field + " must be off, element, or packed, got '" + v + "'");
}

std::string secure_mode_name(SecureMode m) {
  switch (m) {
    case SecureMode::kOff: return "off";
    case SecureMode::kPerElement: return "element";
    case SecureMode::kPacked: return "packed";
  }
  return "off";
}

EvalTarget target_from_name(const std::string& v, const std::string& field) {
  if (v == "test") return EvalTarget::kTest;
  if (v == "validation") return EvalTarget::kValidation;
  throw ConfigError(field + " must be test or validation, got '" + v + "'");
}

std::string target_name(EvalTarget t) {
  return t == EvalTarget::kTest ? "test" : "validation";
}

int parse_count(const std::string& v, const std::string& field, long long lo, long long hi) {
  const long long out = parse_int(v, field);
  if (out < lo || out > hi)
    throw ConfigError(field + " must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) +
                      "], got '" + v + "'");
  return static_cast<int>(out);
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

void set_key(ExperimentConfig& cfg, const std::string& section, const std::string& key,
             const std::string& value) {
  const std::string field = section + "." + key;
  if (section == "data") {
    if (key == "path") cfg.data.path = value;
    else if (key == "format") cfg.data.format = format_from_name(value, field);
    else if (key == "min_interactions") cfg.data.min_interactions = parse_count(value, field, 1, 1 << 20);
    else if (key == "with_validation") cfg.data.with_validation = parse_bool(value, field);
    else if (key == "eval_negatives") cfg.data.eval_negatives = parse_count(value, field, 1, 1 << 20);
    else throw ConfigError("unknown key '" + key + "' in section [data]");
  } else if (section == "model") {
    if (key == "d") cfg.model.d = parse_count(value, field, 1, 1 << 16);
    else if (key == "init_std") cfg.model.init_std = parse_double(value, field);
    else throw ConfigError("unknown key '" + key + "' in section [model]");
  } else if (section == "train") {
    if (key == "method") cfg.train.method = method_from_name(value);
    else if (key == "rank") cfg.train.rank = parse_count(value, field, 1, 1 << 16);
    else if (key == "topk_fraction") cfg.train.topk_fraction = parse_double(value, field);
    else if (key == "rank_sampler") cfg.train.rank_sampler = sampler_from_name(value, field);
    else if (key == "local_rank") cfg.train.local_rank = parse_count(value, field, 0, 1 << 16);
    else if (key == "lr") cfg.train.lr = parse_double(value, field);
    else if (key == "item_lr") cfg.train.item_lr = parse_double(value, field);
    else if (key == "weight_decay") cfg.train.weight_decay = parse_double(value, field);
    else if (key == "epochs") cfg.train.epochs = parse_count(value, field, 1, 1 << 20);
    else if (key == "batch_size") cfg.train.batch_size = parse_count(value, field, 1, 1 << 20);
    else if (key == "negative_ratio") cfg.train.negative_ratio = parse_count(value, field, 1, 1 << 20);
    else if (key == "cohort_fraction") cfg.train.cohort_fraction = parse_double(value, field);
    else if (key == "rounds") cfg.train.rounds = parse_count(value, field, 1, 1 << 30);
    else if (key == "lr_scaling") cfg.train.lr_scaling = parse_bool(value, field);
    else if (key == "server_lr") cfg.train.server_lr = parse_double(value, field);
    else if (key == "decay_mode") cfg.train.decay_mode = decay_from_name(value, field);
    else if (key == "agg_norm") cfg.train.agg_norm = agg_norm_from_name(value, field);
    else if (key == "scolr_row_norm") cfg.train.scolr_row_norm = parse_bool(value, field);
    else if (key == "value_width") cfg.train.value_width = parse_count(value, field, 1, 16);
    else if (key == "index_width") cfg.train.index_width = parse_count(value, field, 1, 16);
    else throw ConfigError("unknown key '" + key + "' in section [train]");
  } else if (section == "secure") {
    if (key == "mode") cfg.secure.mode = secure_mode_from_name(value, field);
    else if (key == "key_bits") cfg.secure.key_bits = parse_count(value, field, 64, 1 << 16);
    else if (key == "scale_bits") cfg.secure.codec.scale_bits = parse_count(value, field, 1, 62);
    else if (key == "slot_bits") cfg.secure.codec.slot_bits = parse_count(value, field, 2, 62);
    else if (key == "headroom_bits") cfg.secure.codec.headroom_bits = parse_count(value, field, 1, 62);
    else if (key == "slots_per_block") cfg.secure.slots_per_block = parse_count(value, field, 1, 1 << 24);
    else throw ConfigError("unknown key '" + key + "' in section [secure]");
  } else if (section == "eval") {
    if (key == "cadence") cfg.eval.cadence = parse_count(value, field, 1, 1 << 30);
    else if (key == "topk") cfg.eval.topk = parse_count(value, field, 1, 1 << 20);
    else if (key == "rank_probe") cfg.eval.rank_probe = parse_bool(value, field);
    else if (key == "target") cfg.eval.target = target_from_name(value, field);
    else if (key == "save_updates") cfg.eval.save_updates = parse_bool(value, field);
    else throw ConfigError("unknown key '" + key + "' in section [eval]");
  } else if (section == "cost") {
    if (key == "bandwidth_down_mib_s") cfg.cost.params.bandwidth_down_mib_s = parse_double(value, field);
    else if (key == "bandwidth_up_mib_s") cfg.cost.params.bandwidth_up_mib_s = parse_double(value, field);
    else if (key == "r_comp") cfg.cost.params.r_comp = parse_double(value, field);
    else if (key == "c_comp") cfg.cost.params.c_comp = parse_double(value, field);
    else if (key == "t_server") cfg.cost.params.t_server = parse_double(value, field);
    else if (key == "t_sim") cfg.cost.t_sim_s = parse_double(value, field);
    else throw ConfigError("unknown key '" + key + "' in section [cost]");
  } else if (section == "run") {
    if (key == "seed") cfg.run.seed = parse_u64(value, field);
    else if (key == "workers") cfg.run.workers = parse_count(value, field, 1, 4096);
    else if (key == "out") cfg.run.out = value;
    else throw ConfigError("unknown key '" + key + "' in section [run]");
  } else {
    throw ConfigError("unknown section [" + section + "]");
  }
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(line_no) + ": malformed section header '" +
                          line + "'");
      section = trim(line.substr(1, line.size() - 2));
      static const char* known[] = {"data", "model", "train", "secure", "eval", "cost", "run"};
      if (std::find(std::begin(known), std::end(known), section) == std::end(known))
        throw ConfigError("unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value, got '" +
                        line + "'");
    if (section.empty())
      throw ConfigError("line " + std::to_string(line_no) + ": key before any [section]");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    set_key(cfg, section, key, value);
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

void apply_env_overrides(ExperimentConfig& cfg) {
  if (const char* seed = std::getenv("FEDLR_SEED"))
    cfg.run.seed = parse_u64(seed, "FEDLR_SEED");
  if (const char* workers = std::getenv("FEDLR_WORKERS"))
    cfg.run.workers = parse_count(workers, "FEDLR_WORKERS", 1, 4096);
}

RoundConfig ExperimentConfig::round_config() const {
  RoundConfig rc;
  rc.method = train.method;
  rc.cohort_fraction = train.cohort_fraction;
  rc.rounds = train.rounds;
  rc.rank = train.rank;
  rc.topk_fraction = train.topk_fraction;
  rc.rank_sampler = train.rank_sampler;
  rc.local_rank = train.local_rank;
  rc.lr_scaling = train.lr_scaling;
  rc.server_lr = train.server_lr;
  rc.agg_norm = train.agg_norm;
  rc.scolr_row_norm = train.scolr_row_norm;
  rc.secure = secure;
  rc.value_width = train.value_width;
  rc.index_width = train.index_width;
  rc.seed = run.seed;
  return rc;
}

LocalConfig ExperimentConfig::local_config() const {
  LocalConfig lc;
  lc.lr = train.lr;
  lc.item_lr = train.item_lr < 0.0 ? train.lr : train.item_lr;
  lc.weight_decay = train.weight_decay;
  lc.epochs = train.epochs;
  lc.batch_size = train.batch_size;
  lc.negative_ratio = train.negative_ratio;
  lc.decay_mode = train.decay_mode;
  return lc;
}

void ExperimentConfig::validate() const {
  const bool low_rank = train.method == Method::kColr || train.method == Method::kScolr ||
                        train.method == Method::kFedMfSvd;
  if (low_rank && train.rank > model.d)
    throw ConfigError("train.rank (" + std::to_string(train.rank) + ") must not exceed model.d (" +
                      std::to_string(model.d) + ")");
  if (train.method == Method::kScolr && train.local_rank > train.rank)
    throw ConfigError("train.local_rank must not exceed train.rank");
  if (train.method == Method::kFedMfTopk &&
      (!(train.topk_fraction > 0.0) || train.topk_fraction > 1.0))
    throw ConfigError("train.topk_fraction must lie in (0, 1]");
  if (!(train.cohort_fraction > 0.0) || train.cohort_fraction > 1.0)
    throw ConfigError("train.cohort_fraction must lie in (0, 1]");
  if (!(train.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (model.init_std < 0.0) throw ConfigError("model.init_std must be non-negative");
  if (eval.topk > data.eval_negatives + 1)
    throw ConfigError("eval.topk must not exceed data.eval_negatives + 1");
  if (eval.target == EvalTarget::kValidation && !data.with_validation)
    throw ConfigError("eval.target = validation requires data.with_validation = true");
  if (secure.mode != SecureMode::kOff) {
    secure.codec.validate();
    if (secure.key_bits % 2 != 0) throw ConfigError("secure.key_bits must be even");
  }
  if (!(cost.params.bandwidth_down_mib_s > 0.0) || !(cost.params.bandwidth_up_mib_s > 0.0))
    throw ConfigError("cost bandwidths must be positive");
  if (cost.params.r_comp < 0.0 || cost.params.c_comp < 0.0 || cost.params.t_server < 0.0 ||
      cost.t_sim_s < 0.0)
    throw ConfigError("cost model times must be non-negative");
  if (run.out.empty()) throw ConfigError("run.out must not be empty");
}

std::string config_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["data"] = {{"path", cfg.data.path},
               {"format", format_name(cfg.data.format)},
               {"min_interactions", cfg.data.min_interactions},
               {"with_validation", cfg.data.with_validation},
               {"eval_negatives", cfg.data.eval_negatives}};
  j["model"] = {{"d", cfg.model.d}, {"init_std", cfg.model.init_std}};
  j["train"] = {{"method", method_name(cfg.train.method)},
                {"rank", cfg.train.rank},
                {"topk_fraction", cfg.train.topk_fraction},
                {"rank_sampler", sampler_name(cfg.train.rank_sampler)},
                {"local_rank", cfg.train.local_rank},
                {"lr", cfg.train.lr},
                {"item_lr", cfg.train.item_lr},
                {"weight_decay", cfg.train.weight_decay},
                {"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"negative_ratio", cfg.train.negative_ratio},
                {"cohort_fraction", cfg.train.cohort_fraction},
                {"rounds", cfg.train.rounds},
                {"lr_scaling", cfg.train.lr_scaling},
                {"server_lr", cfg.train.server_lr},
                {"decay_mode", decay_name(cfg.train.decay_mode)},
                {"agg_norm", agg_norm_name(cfg.train.agg_norm)},
                {"scolr_row_norm", cfg.train.scolr_row_norm},
                {"value_width", cfg.train.value_width},
                {"index_width", cfg.train.index_width}};
  j["secure"] = {{"mode", secure_mode_name(cfg.secure.mode)},
                 {"key_bits", cfg.secure.key_bits},
                 {"scale_bits", cfg.secure.codec.scale_bits},
                 {"slot_bits", cfg.secure.codec.slot_bits},
                 {"headroom_bits", cfg.secure.codec.headroom_bits},
                 {"slots_per_block", cfg.secure.slots_per_block}};
  j["eval"] = {{"cadence", cfg.eval.cadence},
               {"topk", cfg.eval.topk},
               {"rank_probe", cfg.eval.rank_probe},
               {"target", target_name(cfg.eval.target)},
               {"save_updates", cfg.eval.save_updates}};
  j["cost"] = {{"bandwidth_down_mib_s", cfg.cost.params.bandwidth_down_mib_s},
               {"bandwidth_up_mib_s", cfg.cost.params.bandwidth_up_mib_s},
               {"r_comp", cfg.cost.params.r_comp},
               {"c_comp", cfg.cost.params.c_comp},
               {"t_server", cfg.cost.params.t_server},
               {"t_sim", cfg.cost.t_sim_s}};
  j["run"] = {{"seed", cfg.run.seed}, {"workers", cfg.run.workers}, {"out", cfg.run.out}};
  return j.dump(2) + "\n";
}

// ===== result records =====

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "round,method,hr,ndcg,n95_mean,n95_std,n99_mean,n99_std,up_bytes,down_bytes\n";
  for (const auto& r : rows) {
    os << r.round << ',' << r.method << ',' << fmt(r.hr) << ',' << fmt(r.ndcg) << ','
       << fmt(r.n95_mean) << ',' << fmt(r.n95_std) << ',' << fmt(r.n99_mean) << ','
       << fmt(r.n99_std) << ',' << r.up_bytes << ',' << r.down_bytes << '\n';
  }
  return os.str();
}

std::string summary_csv(const std::vector<RunSummary>& runs) {
  std::ostringstream os;
  os << "method,rank,up_bytes,down_bytes,hr,ndcg,best_hr,best_ndcg,t_comm_s,t_comp_s,t_round_s\n";
  for (const auto& r : runs) {
    os << r.method << ',' << r.rank << ',' << r.up_bytes << ',' << r.down_bytes << ','
       << fmt(r.hr) << ',' << fmt(r.ndcg) << ',' << fmt(r.best_hr) << ',' << fmt(r.best_ndcg)
       << ',' << fmt(r.t_comm_s) << ',' << fmt(r.t_comp_s) << ',' << fmt(r.t_round_s) << '\n';
  }
  return os.str();
}

std::string summary_text(const std::vector<RunSummary>& runs) {
  const std::vector<std::string> header = {"method",  "rank",    "up_bytes",  "down_bytes",
                                           "hr",      "ndcg",    "best_hr",   "best_ndcg",
                                           "t_comm_s", "t_comp_s", "t_round_s"};
  std::vector<std::vector<std::string>> table;
  table.push_back(header);
  for (const auto& r : runs) {
    table.push_back({r.method, std::to_string(r.rank), std::to_string(r.up_bytes),
                     std::to_string(r.down_bytes), fmt(r.hr, 2), fmt(r.ndcg, 2),
                     fmt(r.best_hr, 2), fmt(r.best_ndcg, 2), fmt(r.t_comm_s, 2),
                     fmt(r.t_comp_s, 2), fmt(r.t_round_s, 2)});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : table)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream os;
  for (const auto& row : table) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) os << "  ";
      // left-align the method column, right-align the numbers
      if (i == 0)
        os << row[i] << std::string(width[i] - row[i].size(), ' ');
      else
        os << std::string(width[i] - row[i].size(), ' ') << row[i];
    }
    os << '\n';
  }
  return os.str();
}

std::string he_bench_csv(const std::vector<HeBenchRow>& rows) {
  std::ostringstream os;
  os << "method,k_or_r,client_overhead_s,server_overhead_s,ciphertext_KB,plaintext_KB,"
        "comm_ratio,measured_ops\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.k_or_r << ',' << fmt(r.client_overhead_s) << ','
       << fmt(r.server_overhead_s) << ',' << fmt(r.ciphertext_kb, 3) << ','
       << fmt(r.plaintext_kb, 3) << ',' << fmt(r.comm_ratio, 3) << ',' << r.measured_ops
       << '\n';
  }
  return os.str();
}

LedgerCost cost_from_ledger(const std::vector<LedgerRow>& rows, const CostConfig& cost) {
  if (rows.empty()) throw ConfigError("cost model: ledger has no rounds");
  const double mib = 1024.0 * 1024.0;
  LedgerCost lc;
  lc.rounds = static_cast<int>(rows.size());
  lc.up_bytes = rows.back().up_max;
  lc.down_bytes = rows.back().down_max;
  double t_comm = 0.0;
  for (const auto& r : rows) {
    t_comm += static_cast<double>(r.down_max) / (cost.params.bandwidth_down_mib_s * mib);
    t_comm += static_cast<double>(r.up_max) / (cost.params.bandwidth_up_mib_s * mib);
  }
  lc.report.t_comm_s = t_comm;
  lc.report.t_comp_s =
      lc.rounds * (cost.params.r_comp * cost.t_sim_s + cost.params.c_comp + cost.params.t_server);
  lc.report.t_round_s = lc.report.t_comm_s + lc.report.t_comp_s;
  return lc;
}

std::string cost_csv(const LedgerCost& lc) {
  std::ostringstream os;
  os << "rounds,up_bytes,down_bytes,t_comm_s,t_comp_s,t_round_s,t_comm_min,t_round_min\n";
  os << lc.rounds << ',' << lc.up_bytes << ',' << lc.down_bytes << ',' << fmt(lc.report.t_comm_s)
     << ',' << fmt(lc.report.t_comp_s) << ',' << fmt(lc.report.t_round_s) << ','
     << fmt(lc.report.t_comm_s / 60.0) << ',' << fmt(lc.report.t_round_s / 60.0) << '\n';
  return os.str();
}

std::vector<LedgerRow> parse_ledger_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line))
    throw ParseError("ledger csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::string header =
      "round,method,cohort,up_bytes,down_bytes,up_total_bytes,down_total_bytes,"
      "cum_up_bytes,cum_down_bytes";
  if (line != header) throw ParseError("ledger csv: unexpected header '" + line + "'", 1);
  std::vector<LedgerRow> rows;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() != 9)
      throw ParseError("ledger csv: expected 9 fields, got " + std::to_string(fields.size()),
                       line_no);
    LedgerRow r;
    try {
      r.round = static_cast<int>(parse_int(fields[0], "round"));
      r.method = fields[1];
      r.cohort = static_cast<int>(parse_int(fields[2], "cohort"));
      r.up_max = parse_u64(fields[3], "up_bytes");
      r.down_max = parse_u64(fields[4], "down_bytes");
      r.up_total = parse_u64(fields[5], "up_total_bytes");
      r.down_total = parse_u64(fields[6], "down_total_bytes");
      r.cum_up = parse_u64(fields[7], "cum_up_bytes");
      r.cum_down = parse_u64(fields[8], "cum_down_bytes");
    } catch (const ConfigError& e) {
      throw ParseError(std::string("ledger csv: ") + e.what(), line_no);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

// ===== run driver =====

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp(path + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("cannot write " + tmp.string());
    os << content;
    os.flush();
    if (!os) throw ConfigError("short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

namespace {

std::string matrix_csv(const Eigen::MatrixXd& m) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << m(i, j);
    }
    os << '\n';
  }
  return os.str();
}

std::string zero_pad(long long v, int width) {
  std::ostringstream os;
  os << std::setw(width) << std::setfill('0') << v;
  return os.str();
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(cfg.run.out);
  const std::string out = cfg.run.out;

  const auto ratings = parse_ratings(cfg.data.path, cfg.data.format);
  const auto table = build_table(ratings, cfg.data.min_interactions);
  const auto split =
      leave_one_out(table, cfg.data.with_validation, cfg.data.eval_negatives, cfg.run.seed);

  SimulatorOptions opts;
  opts.workers = cfg.run.workers;
  opts.rank_probe = cfg.eval.rank_probe;
  opts.keep_updates = cfg.eval.save_updates;
  Simulator sim(split, cfg.round_config(), cfg.local_config(), cfg.model.d, cfg.model.init_std,
                opts);

  write_file_atomic(out + "/config.json", config_json(cfg));

  std::vector<MetricsRow> metrics;
  std::vector<SecureAggReport> he_reports;
  double best_hr = 0.0, best_ndcg = 0.0;
  RoundTraffic last_traffic;
  for (int t = 0; t < cfg.train.rounds; ++t) {
    const RoundResult r = sim.run_round();
    if (r.he_valid) he_reports.push_back(r.he);
    last_traffic = r.traffic;
    const bool eval_now = (t + 1) % cfg.eval.cadence == 0 || t + 1 == cfg.train.rounds;
    if (!eval_now) continue;

    const EvalResult e = sim.evaluate(cfg.eval.topk, cfg.eval.target);
    MetricsRow row;
    row.round = t + 1;
    row.method = method_name(cfg.train.method);
    row.hr = e.hr_pct;
    row.ndcg = e.ndcg_pct;
    if (r.probe_valid) {
      row.n95_mean = r.probe.mean95;
      row.n95_std = r.probe.std95;
      row.n99_mean = r.probe.mean99;
      row.n99_std = r.probe.std99;
    }
    row.up_bytes = r.traffic.up_max;
    row.down_bytes = r.traffic.down_max;
    metrics.push_back(row);
    best_hr = std::max(best_hr, e.hr_pct);
    best_ndcg = std::max(best_ndcg, e.ndcg_pct);
    write_file_atomic(out + "/metrics.csv", metrics_csv(metrics));
    write_file_atomic(out + "/ledger.csv", sim.server().ledger.to_csv());

    if (cfg.eval.save_updates) {
      for (std::size_t i = 0; i < r.updates.size(); ++i) {
        const std::string name = out + "/updates/round" + zero_pad(r.round, 6) + "_user" +
                                 zero_pad(r.cohort[i], 6) + ".csv";
        write_file_atomic(name, matrix_csv(r.updates[i]));
      }
    }
  }

  const LedgerCost lc = cost_from_ledger(sim.server().ledger.rows(), cfg.cost);
  write_file_atomic(out + "/cost.csv", cost_csv(lc));

  if (!he_reports.empty()) {
    HeBenchRow row;
    row.method = method_name(cfg.train.method);
    row.k_or_r = cfg.train.method == Method::kColr ? cfg.train.rank : cfg.model.d;
    double enc = 0.0, add = 0.0;
    for (const auto& r : he_reports) {
      enc += r.client_encrypt_s;
      add += r.server_add_s;
    }
    row.client_overhead_s = enc / static_cast<double>(he_reports.size());
    row.server_overhead_s = add / static_cast<double>(he_reports.size());
    row.ciphertext_kb = static_cast<double>(he_reports.back().ciphertext_bytes) / 1024.0;
    row.plaintext_kb = static_cast<double>(he_reports.back().plaintext_bytes) / 1024.0;
    row.comm_ratio = row.plaintext_kb > 0.0 ? row.ciphertext_kb / row.plaintext_kb : 0.0;
    row.measured_ops = static_cast<std::int64_t>(he_reports.back().plaintext_bytes / 4);
    write_file_atomic(out + "/he_bench.csv", he_bench_csv({row}));
  }

  RunSummary summary;
  summary.method = method_name(cfg.train.method);
  summary.rank = cfg.train.rank;
  summary.up_bytes = lc.up_bytes;
  summary.down_bytes = lc.down_bytes;
  if (!metrics.empty()) {
    summary.hr = metrics.back().hr;
    summary.ndcg = metrics.back().ndcg;
  }
  summary.best_hr = best_hr;
  summary.best_ndcg = best_ndcg;
  summary.t_comm_s = lc.report.t_comm_s;
  summary.t_comp_s = lc.report.t_comp_s;
  summary.t_round_s = lc.report.t_round_s;
  write_file_atomic(out + "/summary.csv", summary_csv({summary}));
  write_file_atomic(out + "/summary.txt", summary_text({summary}));
  return summary;
}

}  // namespace fedlr
