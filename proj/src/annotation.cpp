#include "normprior/annotation.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <set>

#include "json.hpp"
#include "normprior/text.hpp"

namespace normprior::annotation {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::string_view kInstructions =
#include "annotator_instructions.inc"
    ;

std::string format_timestamp(Clock::time_point tp) {
  using namespace std::chrono;
  const auto ms = duration_cast<milliseconds>(tp.time_since_epoch()).count();
  auto secs = static_cast<std::time_t>(ms / 1000);
  long millis = static_cast<long>(ms % 1000);
  if (millis < 0) {
    millis += 1000;
    --secs;
  }
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[40];
  const std::size_t n = std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  std::snprintf(buf + n, sizeof buf - n, ".%03ldZ", millis);
  return buf;
}

Clock::time_point parse_timestamp(const std::string& s) {
  std::tm tm{};
  int millis = 0;
  char tail = 0;
  const int got = std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d.%3d%c", &tm.tm_year,
                              &tm.tm_mon, &tm.tm_mday, &tm.tm_hour, &tm.tm_min,
                              &tm.tm_sec, &millis, &tail);
  if (got < 6) throw ValidationError("invalid timestamp: " + s);
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  const std::time_t secs = timegm(&tm);
  return Clock::time_point(std::chrono::seconds(secs)) +
         std::chrono::milliseconds(got >= 7 ? millis : 0);
}

}  // namespace

std::string_view annotator_instructions() { return text::trim(kInstructions); }

std::string_view to_string(ItemStatus s) {
  switch (s) {
    case ItemStatus::kOpen: return "open";
    case ItemStatus::kConsensus: return "consensus";
    case ItemStatus::kDiscarded: return "discarded";
  }
  return "open";
}

ConsensusPolicy::ConsensusPolicy(int required_votes, int max_dissent)
    : required_votes_(required_votes), max_dissent_(max_dissent) {
  if (required_votes < 1) {
    throw ValidationError("consensus policy: required_votes must be >= 1");
  }
  if (max_dissent < 0 || 2 * max_dissent >= required_votes) {
    throw ValidationError(
        "consensus policy: max_dissent must satisfy 0 <= max_dissent < "
        "required_votes / 2");
  }
}

Outcome aggregate_consensus(std::span<const VoteRecord> votes,
                            const ConsensusPolicy& policy) {
  if (static_cast<int>(votes.size()) != policy.required_votes()) {
    throw ValidationError("aggregate_consensus: expected " +
                          std::to_string(policy.required_votes()) + " votes, got " +
                          std::to_string(votes.size()));
  }
  std::set<std::string> annotators;
  int normative = 0;
  for (const auto& v : votes) {
    if (v.item_id != votes.front().item_id) {
      throw ValidationError("aggregate_consensus: votes span several items");
    }
    if (!annotators.insert(v.annotator_id).second) {
      throw ValidationError("aggregate_consensus: repeated annotator " + v.annotator_id);
    }
    normative += v.vote == Label::kNormative;
  }
  const int other = policy.required_votes() - normative;
  const int minority = std::min(normative, other);
  if (minority > policy.max_dissent()) return {};
  return {normative > other ? Label::kNormative : Label::kNonNormative};
}

// ---------------------------------------------------------------------------

std::vector<AnnotationItem> parse_items(std::string_view jsonl,
                                        const std::string& origin) {
  std::vector<AnnotationItem> items;
  std::set<std::string> ids;
  std::size_t number = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    std::size_t end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    const std::string_view line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++number;
    if (text::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw RecordError(origin, number, "<record>", e.what());
    }
    AnnotationItem item;
    for (const char* field : {"item_id", "text"}) {
      if (!j.contains(field) || !j[field].is_string()) {
        throw RecordError(origin, number, field, "missing or not a string");
      }
    }
    item.item_id = j["item_id"].get<std::string>();
    item.text = j["text"].get<std::string>();
    if (text::trim(item.text).empty()) {
      throw RecordError(origin, number, "text", "empty");
    }
    if (auto it = j.find("context_note"); it != j.end() && !it->is_null()) {
      if (!it->is_string()) {
        throw RecordError(origin, number, "context_note", "expected a string");
      }
      item.context_note = it->get<std::string>();
    }
    if (!ids.insert(item.item_id).second) {
      throw RecordError(origin, number, "item_id", "duplicate id " + item.item_id);
    }
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<AnnotationItem> load_items(const std::string& path) {
  return parse_items(text::read_file(path), path);
}

std::string to_json_line(const VoteRecord& v) {
  ordered_json j;
  j["item_id"] = v.item_id;
  j["annotator_id"] = v.annotator_id;
  j["vote"] = to_string(v.vote);
  j["ts"] = format_timestamp(v.timestamp);
  return j.dump() + "\n";
}

VoteRecord vote_from_json(std::string_view line) {
  VoteRecord v;
  try {
    const json j = json::parse(line);
    v.item_id = j.at("item_id").get<std::string>();
    v.annotator_id = j.at("annotator_id").get<std::string>();
    const auto vote = j.at("vote").get<std::string>();
    if (!parse_label(vote, v.vote)) throw ValidationError("unknown vote " + vote);
    v.timestamp = parse_timestamp(j.at("ts").get<std::string>());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid vote record: ") + e.what());
  }
  return v;
}

// ---------------------------------------------------------------------------

AnnotationStore::AnnotationStore(std::vector<AnnotationItem> items,
                                 ConsensusPolicy policy,
                                 std::optional<std::string> vote_log_path,
                                 std::function<Clock::time_point()> clock)
    : policy_(policy), clock_(std::move(clock)) {
  for (auto& item : items) {
    if (index_.count(item.item_id) != 0) {
      throw ValidationError("duplicate annotation item " + item.item_id);
    }
    item.status = ItemStatus::kOpen;
    item.label.reset();
    item.votes = 0;
    index_[item.item_id] = items_.size();
    items_.push_back(std::move(item));
  }
  if (!vote_log_path) return;

  if (std::filesystem::exists(*vote_log_path)) {
    const std::string contents = text::read_file(*vote_log_path);
    std::size_t pos = 0;
    std::size_t number = 0;
    while (pos < contents.size()) {
      std::size_t end = contents.find('\n', pos);
      if (end == std::string::npos) end = contents.size();
      const std::string_view line = std::string_view(contents).substr(pos, end - pos);
      pos = end + 1;
      ++number;
      if (text::trim(line).empty()) continue;
      try {
        apply_locked(vote_from_json(line));
      } catch (const ValidationError& e) {
        throw RecordError(*vote_log_path, number, "<record>", e.what());
      }
    }
  }
  log_file_.open(*vote_log_path, std::ios::app | std::ios::binary);
  if (!log_file_) throw ValidationError("cannot open vote log " + *vote_log_path);
}

VoteAck AnnotationStore::apply_locked(const VoteRecord& v) {
  auto it = index_.find(v.item_id);
  if (it == index_.end()) {
    throw VoteRejected(VoteRejected::Reason::kUnknownItem, "unknown item " + v.item_id);
  }
  AnnotationItem& item = items_[it->second];
  if (item.status != ItemStatus::kOpen) {
    throw VoteRejected(VoteRejected::Reason::kFinalized,
                       "item " + v.item_id + " is already " +
                           std::string(to_string(item.status)));
  }
  auto& votes = votes_by_item_[v.item_id];
  for (const auto& prior : votes) {
    if (prior.annotator_id == v.annotator_id) {
      throw VoteRejected(VoteRejected::Reason::kDuplicate,
                         "annotator " + v.annotator_id + " already voted on " + v.item_id);
    }
  }
  if (log_file_.is_open()) {
    log_file_ << to_json_line(v);
    log_file_.flush();
    if (!log_file_) throw std::runtime_error("vote log write failed");
  }
  votes.push_back(v);
  log_.push_back(v);
  item.votes = static_cast<int>(votes.size());
  if (item.votes == policy_.required_votes()) {
    const Outcome out = aggregate_consensus(votes, policy_);
    item.status = out.discarded() ? ItemStatus::kDiscarded : ItemStatus::kConsensus;
    item.label = out.label;
  }
  return {item.status, item.label, item.votes};
}

VoteAck AnnotationStore::submit_vote(const std::string& item_id,
                                     const std::string& annotator_id, Label vote) {
  if (annotator_id.empty()) throw ValidationError("annotator id must not be empty");
  std::lock_guard lock(mu_);
  return apply_locked({item_id, annotator_id, vote, clock_()});
}

std::optional<AnnotationItem> AnnotationStore::next_item(
    const std::string& annotator_id) const {
  std::lock_guard lock(mu_);
  const AnnotationItem* best = nullptr;
  for (const auto& item : items_) {
    if (item.status != ItemStatus::kOpen) continue;
    if (auto it = votes_by_item_.find(item.item_id); it != votes_by_item_.end()) {
      const bool voted = std::any_of(it->second.begin(), it->second.end(),
                                     [&](const VoteRecord& v) {
                                       return v.annotator_id == annotator_id;
                                     });
      if (voted) continue;
    }
    if (best == nullptr || item.votes > best->votes) best = &item;
  }
  if (best == nullptr) return std::nullopt;
  return *best;
}

Progress AnnotationStore::progress() const {
  std::lock_guard lock(mu_);
  Progress p;
  for (const auto& item : items_) {
    switch (item.status) {
      case ItemStatus::kOpen: ++p.open; break;
      case ItemStatus::kConsensus: ++p.consensus; break;
      case ItemStatus::kDiscarded: ++p.discarded; break;
    }
  }
  p.total_votes = log_.size();
  return p;
}

std::optional<AnnotationItem> AnnotationStore::item(const std::string& item_id) const {
  std::lock_guard lock(mu_);
  auto it = index_.find(item_id);
  if (it == index_.end()) return std::nullopt;
  return items_[it->second];
}

std::vector<AnnotationItem> AnnotationStore::items() const {
  std::lock_guard lock(mu_);
  return items_;
}

std::vector<VoteRecord> AnnotationStore::votes() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::vector<corpus::LabeledExample> AnnotationStore::consensus_examples(
    corpus::Source campaign) const {
  std::lock_guard lock(mu_);
  std::vector<corpus::LabeledExample> out;
  for (const auto& item : items_) {
    if (item.status != ItemStatus::kConsensus) continue;
    out.push_back({item.item_id, item.text, *item.label, campaign,
                   corpus::Split::kUnassigned});
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

metrics::EvalReport score_against(
    const std::vector<std::pair<std::string, Label>>& tagged,
    const std::vector<corpus::LabeledExample>& ground_truth,
    metrics::Averaging averaging) {
  std::map<std::string, Label> gold;
  for (const auto& e : ground_truth) gold[e.id] = e.label;
  std::set<std::string> missing;
  std::vector<metrics::Prediction> preds;
  for (const auto& [id, tag] : tagged) {
    auto it = gold.find(id);
    if (it == gold.end()) {
      missing.insert(id);
      continue;
    }
    preds.push_back({tag, it->second});
  }
  if (!missing.empty()) {
    std::string msg = "ids not in ground truth:";
    for (const auto& id : missing) msg += " " + id;
    throw ValidationError(msg);
  }
  return metrics::compute_metrics(metrics::confusion(preds), averaging);
}

}  // namespace

metrics::EvalReport human_agreement(const std::map<std::string, Label>& tags,
                                    const std::vector<corpus::LabeledExample>& ground_truth,
                                    metrics::Averaging averaging) {
  return score_against({tags.begin(), tags.end()}, ground_truth, averaging);
}

metrics::EvalReport human_agreement(std::span<const VoteRecord> votes,
                                    const std::vector<corpus::LabeledExample>& ground_truth,
                                    metrics::Averaging averaging) {
  std::vector<std::pair<std::string, Label>> tagged;
  for (const auto& v : votes) tagged.emplace_back(v.item_id, v.vote);
  return score_against(tagged, ground_truth, averaging);
}

}  // namespace normprior::annotation
