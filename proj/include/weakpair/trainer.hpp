#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "weakpair/datagen.hpp"
#include "weakpair/encoders.hpp"
#include "weakpair/losses.hpp"
#include "weakpair/mining.hpp"

namespace weakpair::train {

enum class AblationMode { Baseline, Uitc, UitcGitm };

const char* ablation_name(AblationMode mode);
AblationMode parse_ablation(std::string_view name);

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    double base_lr = 1e-3;
    std::size_t warmup_steps = 20;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    loss::LossWeights weights;
    mining::MiningConfig mining;
    loss::UncertaintyMapping mapping = loss::UncertaintyMapping::Exponential;
    std::size_t embed_dim = 32;
    std::size_t hidden_dim = 64;
    std::size_t head_hidden_dim = 32;
    double initial_tau = 0.07;
    AblationMode ablation_mode = AblationMode::UitcGitm;

    void validate() const;
    // Flat key=value form, used by checkpoints and config files.
    std::vector<std::pair<std::string, std::string>> to_pairs() const;
    // Throws std::invalid_argument on an unknown key or malformed value.
    void set(const std::string& key, const std::string& value);
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Linear ramp 0 -> base_lr over warmup_steps, then linear decay to base_lr / 10
// at the last step (total_steps - 1).
double step_lr(std::uint64_t step, const TrainConfig& cfg, std::uint64_t total_steps);

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct Checkpoint {
    static constexpr int kVersion = 1;

    int version = kVersion;
    TrainConfig config;
    model::Model model;
    AdamState adam;
    std::string rng_state;
    std::uint64_t step = 0;
    std::uint64_t total_steps = 0;
    std::vector<data::IdentityId> epoch_order;  // identity order of the epoch in progress

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

class CheckpointFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void save(const Checkpoint& c, std::ostream& os);
void save(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load(std::istream& is);
Checkpoint load(const std::filesystem::path& path);

struct StepRecord {
    std::uint64_t step = 0;
    double lr = 0.0;
    loss::LossReport losses;
    std::size_t clamped = 0;
    friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::size_t clamped_total = 0;
    std::size_t starvation_events = 0;
    double wall_seconds = 0.0;  // excluded from equality
    friend bool operator==(const TrainLog& a, const TrainLog& b) {
        return a.steps == b.steps && a.clamped_total == b.clamped_total &&
               a.starvation_events == b.starvation_events;
    }
};

// Non-finite loss or parameter; the message carries the step and the loss parts.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Mining starvation re-raised with the failing step index.
class StepError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Deterministic single-threaded training loop.
//
// Every epoch visits each training identity once in a shuffled order, one
// randomly chosen record per identity; a short final batch is topped up from
// the start of the epoch order so batches keep distinct identities. Each step
// draws weak partners, encodes anchors and weak partners, mines negatives on
// the current similarities, evaluates the losses of the ablation mode and
// applies one AdamW update.
class Trainer {
public:
    Trainer(const TrainConfig& cfg, const data::DatasetManifest& train_data);
    // Resumes from a checkpoint; the dataset must be the one it was trained on.
    Trainer(Checkpoint checkpoint, const data::DatasetManifest& train_data);

    std::uint64_t step() const { return step_; }
    std::uint64_t total_steps() const { return total_steps_; }
    std::size_t steps_per_epoch() const { return steps_per_epoch_; }
    bool done() const { return step_ >= total_steps_; }

    const StepRecord& step_once();
    // Runs until `stop_step` (exclusive) or the end of training.
    void run(std::uint64_t stop_step = UINT64_MAX);

    Checkpoint checkpoint() const;
    const model::Model& model() const { return model_; }
    const TrainLog& log() const { return log_; }
    const TrainConfig& config() const { return cfg_; }

private:
    void index_data();
    std::vector<std::size_t> next_batch();

    TrainConfig cfg_;
    const data::DatasetManifest* data_;
    data::IdentityIndex by_identity_;
    std::vector<data::IdentityId> identities_;
    model::Model model_;
    AdamState adam_;
    Rng rng_;
    std::uint64_t step_ = 0;
    std::uint64_t total_steps_ = 0;
    std::size_t steps_per_epoch_ = 0;
    std::vector<data::IdentityId> epoch_order_;
    TrainLog log_;
};

std::pair<Checkpoint, TrainLog> train(const TrainConfig& cfg, const data::DatasetManifest& data);

model::ModelDims model_dims(const TrainConfig& cfg, const data::DatasetManifest& data);

}  // namespace weakpair::train
