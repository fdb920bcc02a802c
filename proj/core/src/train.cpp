#include "filter/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <variant>

#include <json.hpp>

#include "filter/errors.hpp"
#include "filter/rng.hpp"

namespace filter {

double default_lambda(Task task) {
  switch (task) {
    case Task::Classification:
      return 0.5;
    case Task::Tagging:
      return 0.0;
    case Task::Span:
      return 0.9;
  }
  throw ShapeError("default_lambda: bad task");
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.lambda_weight >= 0.0 && cfg.lambda_weight <= 1.0)) {
    throw ConfigError("lambda_weight must be in [0, 1]");
  }
  if ((cfg.task == Task::Tagging) != (cfg.lambda_weight == 0.0)) {
    throw ConfigError(
        "lambda_weight must be 0 for tagging (target labels do not "
        "transfer) and positive for other tasks");
  }
  if (!(cfg.learning_rate > 0.0)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (cfg.epochs < 1) throw ConfigError("epochs must be at least 1");
}

Tensor task_loss(const HeadOutput& head, const Label& label) {
  switch (head.task) {
    case Task::Classification: {
      const int* cls = std::get_if<int>(&label);
      if (!cls) throw DataError("classification expects an integer label");
      return cross_entropy(head.class_logits, *cls);
    }
    case Task::Tagging: {
      const auto* tags = std::get_if<std::vector<int>>(&label);
      if (!tags) throw DataError("tagging expects a tag-vector label");
      return cross_entropy_rows(head.tag_logits, *tags);
    }
    case Task::Span: {
      const auto* span = std::get_if<SpanLabel>(&label);
      if (!span) throw DataError("span expects a span label");
      Tensor s = cross_entropy(head.start_logits, span->start);
      Tensor e = cross_entropy(head.end_logits, span->end);
      return scale(add(s, e), 0.5);
    }
  }
  throw ShapeError("task_loss: bad task");
}

Tensor combined_loss(const Tensor& loss_s, const std::optional<Tensor>& loss_t,
                     const std::optional<Tensor>& loss_kl, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("lambda must be in [0, 1]");
  }
  Tensor total = loss_s;
  if (loss_t && lambda > 0.0) total = add(total, scale(*loss_t, lambda));
  if (loss_kl && lambda < 1.0) {
    total = add(total, scale(*loss_kl, 1.0 - lambda));
  }
  return total;
}

namespace {

Tensor fixed_row(const std::vector<double>& values) {
  return Tensor::from_flat(1, static_cast<int>(values.size()), values);
}

}  // namespace

Tensor distill_loss(const HeadOutput& head, const TaskProbabilities& soft) {
  if (soft.task != head.task) {
    throw DataError("soft label task does not match the head");
  }
  switch (head.task) {
    case Task::Classification: {
      if (static_cast<int>(soft.class_probs.size()) !=
          head.class_logits.cols()) {
        throw DataError("soft label has wrong class count");
      }
      return kl_divergence(fixed_row(soft.class_probs), head.class_logits);
    }
    case Task::Tagging: {
      const int len = head.tag_logits.rows();
      const int n_tags = head.tag_logits.cols();
      if (static_cast<int>(soft.tag_probs.size()) != len) {
        throw DataError("soft label has wrong sequence length");
      }
      std::vector<double> flat;
      flat.reserve(static_cast<std::size_t>(len) * n_tags);
      for (const auto& row : soft.tag_probs) {
        if (static_cast<int>(row.size()) != n_tags) {
          throw DataError("soft label has wrong tag count");
        }
        flat.insert(flat.end(), row.begin(), row.end());
      }
      return kl_divergence_rows(Tensor::from_flat(len, n_tags, flat),
                                head.tag_logits);
    }
    case Task::Span: {
      const int len = head.start_logits.cols();
      if (static_cast<int>(soft.start_probs.size()) != len ||
          static_cast<int>(soft.end_probs.size()) != len) {
        throw DataError("soft label has wrong sequence length");
      }
      Tensor s = kl_divergence(fixed_row(soft.start_probs), head.start_logits);
      Tensor e = kl_divergence(fixed_row(soft.end_probs), head.end_logits);
      return scale(add(s, e), 0.5);
    }
  }
  throw ShapeError("distill_loss: bad task");
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, double learning_rate,
                             double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  if (!(lr_ > 0.0)) throw ConfigError("learning_rate must be positive");
  slots_.reserve(params.size());
  for (Tensor& p : params) {
    if (!p.requires_grad()) {
      throw ShapeError("optimizer parameter does not require grad");
    }
    Slot slot;
    slot.m.assign(p.size(), 0.0);
    slot.v.assign(p.size(), 0.0);
    slot.param = std::move(p);
    slots_.push_back(std::move(slot));
  }
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (Slot& slot : slots_) {
    std::span<const double> grad;
    if (slot.param.has_grad()) grad = slot.param.grad();
    std::span<double> value = slot.param.values_mut();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g;
      slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g * g;
      const double m_hat = slot.m[i] / bc1;
      const double v_hat = slot.v[i] / bc2;
      value[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
    slot.param.zero_grad();
  }
}

const std::vector<double>& AdamOptimizer::first_moment(int slot) const {
  if (slot < 0 || slot >= static_cast<int>(slots_.size())) {
    throw ShapeError("optimizer slot out of range");
  }
  return slots_[slot].m;
}

const std::vector<double>& AdamOptimizer::second_moment(int slot) const {
  if (slot < 0 || slot >= static_cast<int>(slots_.size())) {
    throw ShapeError("optimizer slot out of range");
  }
  return slots_[slot].v;
}

namespace {

StreamInput make_stream(const std::vector<int>& tokens, Task task) {
  StreamInput in;
  in.tokens = tokens;
  if (task == Task::Span) in.candidates = span_candidates(in.tokens);
  return in;
}

struct LossParts {
  Tensor total;
  double loss_s = 0.0;
  std::optional<double> loss_t;
  std::optional<double> loss_kl;
};

LossParts example_loss(const FilterModel& model, const Example& ex,
                       const SoftLabelSet* soft, double lambda) {
  const Task task = model.config().task;
  PairForward fw = model.forward_pair(make_stream(ex.source_tokens, task),
                                      make_stream(ex.target_tokens, task));
  Tensor loss_s = task_loss(fw.source, ex.label_source);

  std::optional<Tensor> loss_t;
  if (task != Task::Tagging) {
    if (!ex.label_target) {
      throw DataError("example " + std::to_string(ex.id) +
                      " lacks a target label");
    }
    loss_t = task_loss(fw.target, *ex.label_target);
  }

  std::optional<Tensor> loss_kl;
  if (soft) {
    auto it = soft->by_id.find(ex.id);
    if (it == soft->by_id.end()) {
      throw DataError("no soft label for example " + std::to_string(ex.id));
    }
    loss_kl = distill_loss(fw.target, it->second);
  }

  LossParts parts;
  parts.total = combined_loss(loss_s, loss_t, loss_kl, lambda);
  parts.loss_s = loss_s.item();
  if (loss_t) parts.loss_t = loss_t->item();
  if (loss_kl) parts.loss_kl = loss_kl->item();
  return parts;
}

TrainResult run_training(const Dataset& data, const FilterConfig& model_cfg,
                         const TrainConfig& cfg, const SoftLabelSet* soft,
                         const EpochCallback& on_epoch) {
  validate(cfg);
  validate(model_cfg);
  if (model_cfg.task != cfg.task || data.config.task != cfg.task) {
    throw ConfigError("task differs between dataset, model and trainer");
  }
  if (soft && soft->task != cfg.task) {
    throw DataError("soft labels belong to a different task");
  }

  std::vector<int> order;
  for (int i = 0; i < static_cast<int>(data.examples.size()); ++i) {
    if (data.examples[i].split == "train") order.push_back(i);
  }
  if (order.empty()) throw DataError("dataset has no train examples");
  if (soft) {
    for (int i : order) {
      if (!soft->by_id.count(data.examples[i].id)) {
        throw DataError("no soft label for example " +
                        std::to_string(data.examples[i].id));
      }
    }
  }

  // The teacher consumes the first two derived streams, the student the
  // next two, so the phases never share initialization or batch order.
  SeedSequence seeds(cfg.seed);
  std::uint64_t init_seed = seeds.next_seed();
  std::uint64_t order_seed = seeds.next_seed();
  if (soft) {
    init_seed = seeds.next_seed();
    order_seed = seeds.next_seed();
  }

  TrainResult result;
  result.model = std::make_unique<FilterModel>(model_cfg, init_seed);

  std::vector<Tensor> params;
  for (auto& [name, tensor] : result.model->named_parameters()) {
    params.push_back(tensor);
  }
  AdamOptimizer optimizer(std::move(params), cfg.learning_rate);
  Xoshiro256StarStar order_rng(order_seed);

  const double lambda =
      soft ? cfg.lambda_weight : (cfg.task == Task::Tagging ? 0.0 : 1.0);
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double sum_s = 0.0, sum_t = 0.0, sum_kl = 0.0;
    std::size_t n_t = 0, n_kl = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      const double inv = 1.0 / static_cast<double>(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        const Example& ex = data.examples[order[i]];
        Tape tape;
        TapeScope scope(tape);
        LossParts parts = example_loss(*result.model, ex, soft, lambda);
        backward(scale(parts.total, inv));
        sum_s += parts.loss_s;
        if (parts.loss_t) {
          sum_t += *parts.loss_t;
          ++n_t;
        }
        if (parts.loss_kl) {
          sum_kl += *parts.loss_kl;
          ++n_kl;
        }
      }
      optimizer.step();
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.loss_s = sum_s / static_cast<double>(order.size());
    if (n_t) stats.loss_t = sum_t / static_cast<double>(n_t);
    if (n_kl) stats.loss_kl = sum_kl / static_cast<double>(n_kl);
    result.log.push_back(stats);
    if (on_epoch && !on_epoch(*result.model, stats)) break;
  }
  return result;
}

}  // namespace

TrainResult train_teacher(const Dataset& data, const FilterConfig& model_cfg,
                          const TrainConfig& cfg,
                          const EpochCallback& on_epoch) {
  return run_training(data, model_cfg, cfg, nullptr, on_epoch);
}

TrainResult train_student(const Dataset& data, const SoftLabelSet& soft,
                          const FilterConfig& model_cfg,
                          const TrainConfig& cfg,
                          const EpochCallback& on_epoch) {
  return run_training(data, model_cfg, cfg, &soft, on_epoch);
}

SoftLabelSet generate_soft_labels(const FilterModel& teacher,
                                  const Dataset& data) {
  const Task task = teacher.config().task;
  SoftLabelSet soft;
  soft.task = task;
  for (const Example& ex : data.examples) {
    if (ex.split != "train") continue;
    PairForward fw = teacher.forward_pair(make_stream(ex.source_tokens, task),
                                          make_stream(ex.target_tokens, task));
    if (!soft.by_id.emplace(ex.id, probabilities(fw.target)).second) {
      throw DataError("duplicate train example id " + std::to_string(ex.id));
    }
  }
  return soft;
}

namespace {

nlohmann::json probabilities_json(const TaskProbabilities& p) {
  switch (p.task) {
    case Task::Classification:
      return p.class_probs;
    case Task::Tagging:
      return p.tag_probs;
    case Task::Span: {
      nlohmann::json j;
      j["end"] = p.end_probs;
      j["start"] = p.start_probs;
      return j;
    }
  }
  throw ShapeError("probabilities_json: bad task");
}

std::vector<double> distribution(const nlohmann::json& v,
                                 const std::string& where) {
  if (!v.is_array() || v.empty()) {
    throw DataError(where + ": expected a non-empty probability array");
  }
  std::vector<double> out;
  out.reserve(v.size());
  double total = 0.0;
  for (const auto& e : v) {
    if (!e.is_number()) throw DataError(where + ": non-numeric probability");
    const double p = e.get<double>();
    if (!(p >= 0.0)) throw DataError(where + ": negative probability");
    out.push_back(p);
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw DataError(where + ": probabilities sum to " + std::to_string(total));
  }
  return out;
}

}  // namespace

void write_soft_labels(const SoftLabelSet& soft, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open soft labels for writing: " + path);
  for (const auto& [id, probs] : soft.by_id) {
    nlohmann::json j;
    j["example_id"] = id;
    j["probabilities"] = probabilities_json(probs);
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("failed writing soft labels: " + path);
}

SoftLabelSet read_soft_labels(const std::string& path, Task task) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open soft labels: " + path);
  SoftLabelSet soft;
  soft.task = task;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);

    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    if (!j.is_object()) throw DataError(where + ": expected an object");
    for (const auto& item : j.items()) {
      if (item.key() != "example_id" && item.key() != "probabilities") {
        throw DataError(where + ": unknown key \"" + item.key() + "\"");
      }
    }
    if (!j.contains("example_id") || !j["example_id"].is_number_integer()) {
      throw DataError(where + ": bad example_id");
    }
    if (!j.contains("probabilities")) {
      throw DataError(where + ": missing probabilities");
    }
    const std::int64_t id = j["example_id"].get<std::int64_t>();
    const nlohmann::json& probs = j["probabilities"];

    TaskProbabilities p;
    p.task = task;
    switch (task) {
      case Task::Classification:
        p.class_probs = distribution(probs, where);
        break;
      case Task::Tagging: {
        if (!probs.is_array() || probs.empty()) {
          throw DataError(where + ": expected per-token probability rows");
        }
        for (const auto& row : probs) {
          p.tag_probs.push_back(distribution(row, where));
        }
        break;
      }
      case Task::Span: {
        if (!probs.is_object()) {
          throw DataError(where + ": expected start/end distributions");
        }
        for (const auto& item : probs.items()) {
          if (item.key() != "start" && item.key() != "end") {
            throw DataError(where + ": unknown key \"" + item.key() + "\"");
          }
        }
        if (!probs.contains("start") || !probs.contains("end")) {
          throw DataError(where + ": missing start or end distribution");
        }
        p.start_probs = distribution(probs["start"], where);
        p.end_probs = distribution(probs["end"], where);
        break;
      }
    }
    if (!soft.by_id.emplace(id, std::move(p)).second) {
      throw DataError(where + ": duplicate example_id " + std::to_string(id));
    }
  }
  return soft;
}

void write_loss_log(const std::vector<EpochStats>& log,
                    const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open loss log for writing: " + path);
  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "epoch,loss_s,loss_t,loss_kl\n";
  for (const EpochStats& s : log) {
    out << s.epoch << ',' << fmt(s.loss_s) << ','
        << (s.loss_t ? fmt(*s.loss_t) : "") << ','
        << (s.loss_kl ? fmt(*s.loss_kl) : "") << '\n';
  }
  if (!out) throw DataError("failed writing loss log: " + path);
}

}  // namespace filter
