#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace relex {

struct EnsembleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InstanceKey {
  std::string doc_id;
  std::string subject_id;
  std::string object_id;

  auto operator<=>(const InstanceKey&) const = default;
};

// Per-instance predicted label sets; an empty set means NONE.
using PredictionSet = std::map<InstanceKey, std::set<std::string>>;

struct MemberInfo {
  std::string tag;  // model family tag
  std::string checkpoint_path;
  double dev_f1 = 0.0;
  std::uint64_t seed = 0;
};

enum class SelectionRule { kDropWorst, kTopK };

struct EnsembleSpec {
  std::vector<MemberInfo> members;
  std::string rule_description;
};

// drop_worst removes exactly one minimum-F1 member; top_k keeps the k
// best. Ties are broken by seed order, ascending.
EnsembleSpec select_members(std::vector<MemberInfo> candidates, SelectionRule rule, int k = 0);

enum class VoteMode { kMajority, kPlurality };

const char* vote_mode_name(VoteMode m);
VoteMode parse_vote_mode(const std::string& s);

// Counts votes per label across members; the labels attaining the maximum
// count win when the threshold is met: strictly more than half the
// members in majority mode, any positive vote in plurality mode. Ties at
// the maximum yield multiple labels. Abstentions (empty sets) never
// compete in the comparison.
PredictionSet majority_vote(const std::vector<PredictionSet>& members, VoteMode mode);

// Number of instances whose predicted set contains each label.
std::map<std::string, long long> count_predictions_by_label(const PredictionSet& predictions);

// Prediction files use the relations TSV format; instances predicted with
// two labels emit two rows. Keys with empty sets emit nothing, so a read
// back only recovers positive predictions.
void write_predictions(const std::string& path, const PredictionSet& predictions);
PredictionSet read_predictions(const std::string& path);

// Aligns several prediction files on the union of their keys, filling
// absent keys with empty sets, then votes.
PredictionSet vote_files(const std::vector<std::string>& paths, VoteMode mode);

}  // namespace relex
