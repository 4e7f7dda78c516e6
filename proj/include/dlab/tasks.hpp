#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dlab/model.hpp"
#include "dlab/rng.hpp"

namespace dlab {

// Fixed 64-token synthetic vocabulary.
namespace vocab {
constexpr int kPad = 0;
constexpr int kEoa = 1;  // end-of-answer
constexpr int kDigit0 = 2;    // "zero".."nine" occupy 2..11
constexpr int kLetterA = 12;  // choice letters A..H occupy 12..19
constexpr int kHour1 = 20;    // hours 1..12 occupy 20..31
constexpr int kMinute0 = 32;  // buckets :00 :15 :30 :45 occupy 32..35
constexpr int kClass0 = 36;   // caption classes occupy 36..43
constexpr int kAttr0 = 44;    // caption attributes occupy 44..51
constexpr int kCountMarker = 52;
constexpr int kClassifyMarker = 53;
constexpr int kClockMarker = 54;
constexpr int kCopyMarker = 55;
constexpr int kCaptionMarker = 56;
constexpr int kThe = 57;
constexpr int kSize = 64;

int digit_token(int value);    // 0..9
int letter_token(int index);   // 0..7
int hour_token(int hour);      // 1..12
int minute_token(int bucket);  // 0..3
int class_token(int index);    // 0..7
int attr_token(int index);     // 0..7
}  // namespace vocab

// Token ids counted as numeric by the drift probe.
const std::vector<int>& numeric_token_set();

enum class TaskKind { Count, Classify, ClockRead, CopyOcr, CaptionHeldOut };

TaskKind task_kind_from_name(const std::string& name);
std::string task_kind_name(TaskKind kind);

struct SyntheticTaskSpec {
    TaskKind kind = TaskKind::Count;
    std::uint64_t seed = 0;
    int train_n = 512;
    int eval_n = 256;
    std::string name;  // distinct per curriculum column
};

struct Example {
    DenseTensor visual;
    std::vector<int> prompt;
    std::vector<int> answer;
};

struct TaskDataset {
    std::string name;
    TaskKind kind;
    std::vector<Example> examples;
};

struct TaskData {
    TaskDataset train;
    TaskDataset eval;
};

// Deterministic in the spec; train and eval draw from disjoint substreams.
TaskData generate_task(const SyntheticTaskSpec& spec, int visual_tokens,
                       int d_v);

// Latent label behind an example's visual features, exposed so tests can fit
// independent probes against the generator.
int count_label(const Example& ex);

}  // namespace dlab
