// ctxlm/trainer.cc

// Copyright 2026  The ctxlm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "ctxlm/trainer.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "ctxlm/errors.h"
#include "json.hpp"

namespace ctxlm {

void TrainingConfig::Validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning rate must be positive");
  if (warmup_steps < 0) throw UsageError("warmup steps must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw UsageError("Adam betas must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw UsageError("Adam epsilon must be positive");
  if (batch_size <= 0) throw UsageError("batch size must be positive");
  if (max_epochs <= 0) throw UsageError("max epochs must be positive");
  if (patience <= 0) throw UsageError("patience must be positive");
  if (max_steps < 0) throw UsageError("max steps must be non-negative");
  if (truncation <= 0) throw UsageError("truncation length must be positive");
}

double LearningRateFactor(std::int64_t step, int warmup_steps) {
  if (warmup_steps <= 0) return 1.0;
  const double s = double(std::max<std::int64_t>(step, 1)), w = warmup_steps;
  return s < w ? s / w : std::sqrt(w / s);
}

AdamOptimizer::AdamOptimizer(const TrainingConfig& config, const ag::ParameterStore& params)
    : config_(config) {
  for (const auto& e : params.entries()) {
    m_.emplace_back(e.second.size(), 0.0);
    v_.emplace_back(e.second.size(), 0.0);
  }
}

double AdamOptimizer::Step(ag::ParameterStore& params) {
  if (params.size() != m_.size()) throw DimensionError("optimizer: parameter count changed");
  ++step_;
  const double lr = config_.learning_rate * LearningRateFactor(step_, config_.warmup_steps);
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, double(step_)), c2 = 1.0 - std::pow(b2, double(step_));
  auto& entries = params.entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    ag::Tensor& t = entries[p].second;
    if (t.node()->grad.empty()) continue;
    auto w = t.mutable_values();
    const auto& g = t.node()->grad;
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.adam_epsilon);
    }
  }
  return lr;
}

double GradientNorm(const ag::ParameterStore& params) {
  double sq = 0.0;
  for (const auto& e : params.entries())
    for (double g : e.second.node()->grad) sq += g * g;
  return std::sqrt(sq);
}

double ClipGradientNorm(ag::ParameterStore& params, double max_norm) {
  const double norm = GradientNorm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& e : params.entries())
      for (double& g : e.second.node()->grad) g *= s;
  }
  return norm;
}

namespace {

std::vector<const Session*> Slice(std::span<const Session> sessions, std::span<const int> order,
                                  std::size_t begin, std::size_t count) {
  std::vector<const Session*> out;
  for (std::size_t i = begin; i < std::min(order.size(), begin + count); ++i)
    out.push_back(&sessions[order[i]]);
  return out;
}

bool HasTargets(const Session& s) { return s.tokens.size() >= 2; }

}  // namespace

PerplexityResult Perplexity(const LanguageModel& model, std::span<const Session> sessions,
                            const DomainEmbeddingTable* domains, int batch_size) {
  if (batch_size <= 0) throw UsageError("batch size must be positive");
  ag::NoGradGuard no_grad;
  std::vector<int> order;
  for (std::size_t i = 0; i < sessions.size(); ++i)
    if (HasTargets(sessions[i])) order.push_back(int(i));
  PerplexityResult r;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    auto ptrs = Slice(sessions, order, i, batch_size);
    SessionBatch batch = MakeBatch(ptrs, domains, model.mlm_input_dim());
    auto runner = model.Runner(batch, batch.length);
    while (!runner->Done()) {
      ChunkLoss c = runner->Next();
      r.nll += c.nll.item();
      r.targets += c.targets;
    }
  }
  if (r.targets == 0) throw UsageError("perplexity: no masked targets");
  r.ppl = std::exp(r.nll / double(r.targets));
  return r;
}

double RelativeReduction(double baseline, double candidate) {
  if (!(baseline > 0.0)) throw UsageError("relative reduction needs a positive baseline");
  return 100.0 * (baseline - candidate) / baseline;
}

TrainingResult Train(LanguageModel& model, std::span<const Session> train,
                     std::span<const Session> valid, const DomainEmbeddingTable* domains,
                     const TrainingConfig& config, const TrainingHooks& hooks) {
  config.Validate();
  std::vector<int> order;
  for (std::size_t i = 0; i < train.size(); ++i)
    if (HasTargets(train[i])) order.push_back(int(i));
  if (order.empty()) throw UsageError("training corpus is empty");
  int valid_targets = 0;
  for (const Session& s : valid) valid_targets += s.TargetCount();
  if (valid_targets == 0) throw UsageError("validation corpus has no masked targets");

  auto& params = model.parameters();
  AdamOptimizer adam(config, params);
  std::mt19937_64 rng(config.seed);
  TrainingResult result;
  std::vector<std::vector<double>> best;
  int since_best = 0;
  bool out_of_steps = false;

  for (int epoch = 1; epoch <= config.max_epochs && !out_of_steps; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double nll = 0.0;
    std::int64_t targets = 0;
    for (std::size_t i = 0; i < order.size() && !out_of_steps; i += config.batch_size) {
      auto ptrs = Slice(train, order, i, config.batch_size);
      SessionBatch batch = MakeBatch(ptrs, domains, model.mlm_input_dim());
      auto runner = model.Runner(batch, config.truncation);
      while (!runner->Done()) {
        params.ZeroGrad();
        ChunkLoss chunk = runner->Next();
        if (chunk.targets == 0) {
          ++result.skipped_windows;
          continue;
        }
        const std::int64_t step = result.steps + 1;
        ag::Tensor loss = ag::Scale(chunk.nll, 1.0 / chunk.targets);
        const double value = loss.item();
        if (!std::isfinite(value)) throw TrainingFailure(step, "non-finite loss");
        ag::Backward(loss);
        const double norm = ClipGradientNorm(params, config.clip_norm);
        if (!std::isfinite(norm)) throw TrainingFailure(step, "non-finite gradient");
        const double lr = adam.Step(params);
        result.steps = step;
        nll += value * chunk.targets;
        targets += chunk.targets;
        if (hooks.on_step) hooks.on_step({step, epoch, value, chunk.targets, norm, lr});
        if (config.max_steps > 0 && step >= config.max_steps) {
          out_of_steps = true;
          break;
        }
      }
    }
    params.ZeroGrad();

    const PerplexityResult v = Perplexity(model, valid, domains, config.batch_size);
    EpochLog log;
    log.epoch = epoch;
    log.train_nll = targets > 0 ? nll / double(targets) : 0.0;
    log.valid_nll = v.nll / double(v.targets);
    log.valid_ppl = v.ppl;
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.epochs.push_back(log);
    if (hooks.log != nullptr) {
      nlohmann::json j = {{"epoch", log.epoch},         {"train_nll", log.train_nll},
                          {"valid_nll", log.valid_nll}, {"valid_ppl", log.valid_ppl},
                          {"wall_seconds", log.wall_seconds}};
      *hooks.log << j.dump() << '\n' << std::flush;
    }
    if (hooks.progress != nullptr)
      *hooks.progress << "epoch " << epoch << ": train nll " << log.train_nll << ", valid ppl "
                      << log.valid_ppl << " (" << log.wall_seconds << " s)\n";

    if (result.best_epoch == 0 || log.valid_ppl < result.best_valid_ppl) {
      result.best_epoch = epoch;
      result.best_valid_ppl = log.valid_ppl;
      best = params.Snapshot();
      since_best = 0;
    } else if (++since_best >= config.patience) {
      if (hooks.progress != nullptr) *hooks.progress << "early stop after epoch " << epoch << "\n";
      break;
    }
  }
  params.Restore(best);
  return result;
}

std::vector<int> Sample(const LanguageModel& model, std::span<const int> prompt,
                        std::span<const double> mlm, const SampleOptions& options) {
  TurnConditioning cond;
  cond.mlm.assign(mlm.begin(), mlm.end());
  return Sample(model, prompt, cond, options);
}

std::vector<int> Sample(const LanguageModel& model, std::span<const int> prompt,
                        const TurnConditioning& cond, const SampleOptions& options) {
  if (prompt.empty()) throw UsageError("sampling needs a non-empty prompt");
  if (!(options.temperature >= 0.0)) throw UsageError("temperature must be non-negative");
  constexpr int kEos = 2;
  ag::NoGradGuard no_grad;
  std::mt19937_64 rng(options.seed);
  auto session = model.NewScoringSession();
  std::vector<double> dist = session->Feed(prompt, cond).back();
  std::vector<int> out;
  while (int(out.size()) < options.max_length) {
    int next = 0;
    if (options.temperature == 0.0) {
      next = int(std::max_element(dist.begin(), dist.end()) - dist.begin());
    } else {
      const double mx = *std::max_element(dist.begin(), dist.end());
      std::vector<double> w(dist.size());
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp((dist[i] - mx) / options.temperature);
      next = std::discrete_distribution<int>(w.begin(), w.end())(rng);
    }
    out.push_back(next);
    if (next == kEos) break;
    const int token[1] = {next};
    dist = session->Feed(token, cond).back();
  }
  return out;
}

}  // namespace ctxlm
