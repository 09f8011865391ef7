#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "normprior/corpus.hpp"
#include "normprior/error.hpp"
#include "normprior/labels.hpp"
#include "normprior/metrics.hpp"

namespace normprior::annotation {

enum class ItemStatus { kOpen, kConsensus, kDiscarded };
std::string_view to_string(ItemStatus s);

struct AnnotationItem {
  std::string item_id;
  std::string text;
  std::optional<std::string> context_note;
  ItemStatus status = ItemStatus::kOpen;
  std::optional<Label> label;  // set once status is kConsensus
  int votes = 0;
};

using Clock = std::chrono::system_clock;

struct VoteRecord {
  std::string item_id;
  std::string annotator_id;
  Label vote = Label::kNormative;
  Clock::time_point timestamp{};
};

class ConsensusPolicy {
 public:
  // Throws ValidationError unless required_votes >= 1 and
  // 0 <= max_dissent < required_votes / 2, which also rules out ties.
  ConsensusPolicy(int required_votes = 5, int max_dissent = 1);

  int required_votes() const { return required_votes_; }
  int max_dissent() const { return max_dissent_; }

 private:
  int required_votes_;
  int max_dissent_;
};

// An empty label means the item is discarded.
struct Outcome {
  std::optional<Label> label;
  bool discarded() const { return !label.has_value(); }
};

// Majority label when the minority count is within max_dissent, otherwise a
// discard. Throws ValidationError unless exactly required_votes votes from
// distinct annotators on one item are given.
Outcome aggregate_consensus(std::span<const VoteRecord> votes,
                            const ConsensusPolicy& policy);

class VoteRejected : public ValidationError {
 public:
  enum class Reason { kUnknownItem, kDuplicate, kFinalized };
  VoteRejected(Reason reason, const std::string& what)
      : ValidationError(what), reason_(reason) {}
  Reason reason() const { return reason_; }

 private:
  Reason reason_;
};

struct VoteAck {
  ItemStatus item_status = ItemStatus::kOpen;
  std::optional<Label> label;
  int votes = 0;
};

struct Progress {
  int open = 0;
  int consensus = 0;
  int discarded = 0;
  std::uint64_t total_votes = 0;
};

// Items to annotate: JSONL {"item_id", "text", "context_note"}.
std::vector<AnnotationItem> load_items(const std::string& path);
std::vector<AnnotationItem> parse_items(std::string_view jsonl,
                                        const std::string& origin);

std::string to_json_line(const VoteRecord& v);
VoteRecord vote_from_json(std::string_view line);

// Vote store with an append-only log and derived item status. All mutating
// and reading calls are serialized, so each vote is linearizable per item.
class AnnotationStore {
 public:
  // When vote_log_path names an existing log, its votes are replayed first;
  // new votes are appended to it before they take effect.
  AnnotationStore(std::vector<AnnotationItem> items, ConsensusPolicy policy,
                  std::optional<std::string> vote_log_path = std::nullopt,
                  std::function<Clock::time_point()> clock = Clock::now);

  VoteAck submit_vote(const std::string& item_id,
                      const std::string& annotator_id, Label vote);

  // Open item this annotator has not voted on, preferring the item closest
  // to finalization; ties go to load order.
  std::optional<AnnotationItem> next_item(const std::string& annotator_id) const;

  Progress progress() const;
  std::optional<AnnotationItem> item(const std::string& item_id) const;
  std::vector<AnnotationItem> items() const;
  std::vector<VoteRecord> votes() const;
  const ConsensusPolicy& policy() const { return policy_; }

  // Consensus items as labeled examples tagged with the campaign source.
  std::vector<corpus::LabeledExample> consensus_examples(corpus::Source campaign) const;

 private:
  VoteAck apply_locked(const VoteRecord& v);

  mutable std::mutex mu_;
  ConsensusPolicy policy_;
  std::vector<AnnotationItem> items_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::vector<VoteRecord>> votes_by_item_;
  std::vector<VoteRecord> log_;
  std::ofstream log_file_;
  std::function<Clock::time_point()> clock_;
};

// Human tags scored as predictions against corpus labels.
metrics::EvalReport human_agreement(
    const std::map<std::string, Label>& tags,
    const std::vector<corpus::LabeledExample>& ground_truth,
    metrics::Averaging averaging = metrics::Averaging::kPositiveClass);

// Every individual vote counts as one prediction.
metrics::EvalReport human_agreement(
    std::span<const VoteRecord> votes,
    const std::vector<corpus::LabeledExample>& ground_truth,
    metrics::Averaging averaging = metrics::Averaging::kPositiveClass);

// Fixed instruction text shown to annotators with every item.
std::string_view annotator_instructions();

}  // namespace normprior::annotation
