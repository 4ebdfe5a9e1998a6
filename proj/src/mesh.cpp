// Copyright 2026 The Attention2D Simulator Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "attn2d/mesh.hpp"

namespace attn2d::mesh {

std::string to_string(ProcCoord p) {
  std::ostringstream os;
  os << "p(" << p.r << "," << p.c << ")";
  return os.str();
}

ProcGrid ProcGrid::square(std::size_t p) {
  if (p == 0) throw ConfigError("processor count must be positive");
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(p))));
  if (side * side != p) {
    throw ConfigError("processor count " + std::to_string(p) + " is not a perfect square");
  }
  return ProcGrid(side, side);
}

ProcGrid ProcGrid::line(std::size_t p) {
  if (p == 0) throw ConfigError("processor count must be positive");
  return ProcGrid(1, p);
}

std::size_t ProcGrid::side() const {
  if (!is_square()) throw ConfigError("grid is not square");
  return rows_;
}

std::size_t ProcGrid::rank(ProcCoord p) const {
  if (!contains(p)) throw ConfigError("coordinate " + to_string(p) + " outside grid");
  return p.r * cols_ + p.c;
}

ProcCoord ProcGrid::coord(std::size_t rank) const {
  if (rank >= size()) throw ConfigError("rank outside grid");
  return {rank / cols_, rank % cols_};
}

std::vector<ProcCoord> ProcGrid::row_group(std::size_t r) const {
  std::vector<ProcCoord> g;
  for (std::size_t c = 0; c < cols_; ++c) g.push_back({r, c});
  return g;
}

std::vector<ProcCoord> ProcGrid::col_group(std::size_t c) const {
  std::vector<ProcCoord> g;
  for (std::size_t r = 0; r < rows_; ++r) g.push_back({r, c});
  return g;
}

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::kAttentionFwd:
      return "attention_fwd";
    case Phase::kAttentionBwd:
      return "attention_bwd";
    case Phase::kLayout:
      return "layout";
    case Phase::kCollectiveInternal:
      return "collective_internal";
  }
  return "unknown";
}

Counters& Counters::operator+=(const Counters& o) {
  words_sent += o.words_sent;
  words_received += o.words_received;
  messages_sent += o.messages_sent;
  messages_received += o.messages_received;
  return *this;
}

void CommLedger::record_send(std::size_t rank, Phase phase, std::string_view op,
                             std::uint64_t words) {
  auto& c = entries_[{rank, phase, std::string(op)}];
  c.words_sent += words;
  c.messages_sent += 1;
}

void CommLedger::record_receive(std::size_t rank, Phase phase, std::string_view op,
                                std::uint64_t words) {
  auto& c = entries_[{rank, phase, std::string(op)}];
  c.words_received += words;
  c.messages_received += 1;
}

Counters CommLedger::total() const {
  Counters t;
  for (const auto& [k, c] : entries_) t += c;
  return t;
}

Counters CommLedger::for_proc(std::size_t rank) const {
  Counters t;
  for (const auto& [k, c] : entries_) {
    if (k.rank == rank) t += c;
  }
  return t;
}

Counters CommLedger::for_proc(std::size_t rank, Phase phase) const {
  Counters t;
  for (const auto& [k, c] : entries_) {
    if (k.rank == rank && k.phase == phase) t += c;
  }
  return t;
}

Counters CommLedger::at(std::size_t rank, Phase phase, std::string_view op) const {
  auto it = entries_.find({rank, phase, std::string(op)});
  return it == entries_.end() ? Counters{} : it->second;
}

void CommLedger::corrupt_for_testing(std::size_t rank, Phase phase, std::string_view op,
                                     std::int64_t delta_words) {
  auto& c = entries_[{rank, phase, std::string(op)}];
  c.words_sent = static_cast<std::uint64_t>(static_cast<std::int64_t>(c.words_sent) + delta_words);
}

nlohmann::json CommLedger::to_json(const ProcGrid& grid) const {
  nlohmann::json per_proc = nlohmann::json::array();
  for (const auto& [k, c] : entries_) {
    const ProcCoord p = grid.coord(k.rank);
    per_proc.push_back({{"r", p.r},
                        {"c", p.c},
                        {"phase", to_string(k.phase)},
                        {"op", k.op},
                        {"words_sent", c.words_sent},
                        {"words_recv", c.words_received},
                        {"msgs_sent", c.messages_sent},
                        {"msgs_recv", c.messages_received}});
  }
  const Counters t = total();
  return {{"per_proc", per_proc},
          {"totals",
           {{"words_sent", t.words_sent},
            {"words_recv", t.words_received},
            {"msgs_sent", t.messages_sent},
            {"msgs_recv", t.messages_received}}}};
}

namespace detail {

struct ChannelKey {
  std::size_t src;
  std::size_t dst;
  std::string tag;
  auto operator<=>(const ChannelKey&) const = default;
};

// Unwinds processors after another one failed or the run deadlocked.
struct AbortSignal {};

enum class ProcState { kReady, kBlocked, kDone };

// One simulation run. Exactly one processor thread executes at a time; the
// baton moves round-robin whenever the holder blocks or finishes, so every
// replay follows the same schedule.
class Fabric {
 public:
  Fabric(const ProcGrid& grid, CommLedger& ledger)
      : grid_(grid), ledger_(ledger), state_(grid.size(), ProcState::kReady),
        blocked_on_(grid.size()), outstanding_(grid.size()), live_(grid.size()) {}

  void run(const std::function<void(Comm&)>& program, SimStats& stats) {
    std::vector<std::thread> threads;
    threads.reserve(grid_.size());
    for (std::size_t rank = 0; rank < grid_.size(); ++rank) {
      threads.emplace_back([this, rank, &program] { thread_main(rank, program); });
    }
    for (auto& t : threads) t.join();
    if (error_) std::rethrow_exception(error_);
    for (const auto& o : outstanding_) stats.outstanding_handles += o.size();
    stats.peak_live_buffers = peak_;
  }

  void post(std::size_t src, std::size_t dst, std::string_view tag, Message msg, Phase phase,
            bool charge) {
    std::lock_guard lk(mu_);
    if (charge && src != dst) ledger_.record_send(src, phase, tag, msg.words);
    channels_[{src, dst, std::string(tag)}].push_back(std::move(msg));
  }

  Message take(std::size_t me, std::size_t src, std::string_view tag, Phase phase, bool charge) {
    std::unique_lock lk(mu_);
    const ChannelKey key{src, me, std::string(tag)};
    for (;;) {
      if (aborted_) throw AbortSignal{};
      auto it = channels_.find(key);
      if (it != channels_.end() && !it->second.empty()) {
        Message msg = std::move(it->second.front());
        it->second.pop_front();
        if (charge && src != me) ledger_.record_receive(me, phase, tag, msg.words);
        return msg;
      }
      state_[me] = ProcState::kBlocked;
      blocked_on_[me] = key;
      hand_off(me);
      cv_.wait(lk, [&] { return current_ == me || aborted_; });
      state_[me] = ProcState::kReady;
    }
  }

  void charge_send(std::size_t rank, Phase phase, std::string_view op, std::uint64_t words) {
    std::lock_guard lk(mu_);
    ledger_.record_send(rank, phase, op, words);
  }

  void track(std::size_t rank, const std::shared_ptr<PendingTransfer>& t) {
    outstanding_[rank].insert(t.get());
  }
  void untrack(std::size_t rank, const PendingTransfer* t) { outstanding_[rank].erase(t); }

  void acquire(std::size_t rank, const std::string& stream) {
    std::size_t& live = live_[rank][stream];
    ++live;
    std::size_t& peak = peak_[stream];
    peak = std::max(peak, live);
    if (live > kMaxLiveBuffers) {
      throw SimulationFault("stream '" + stream + "' on " + to_string(grid_.coord(rank)) +
                            " needs " + std::to_string(live) + " live buffers");
    }
  }
  void release(std::size_t rank, const std::string& stream) {
    std::size_t& live = live_[rank][stream];
    if (live > 0) --live;
  }

 private:
  static constexpr std::size_t kMaxLiveBuffers = 2;

  void thread_main(std::size_t rank, const std::function<void(Comm&)>& program) {
    {
      std::unique_lock lk(mu_);
      cv_.wait(lk, [&] { return current_ == rank || aborted_; });
      if (aborted_) {
        state_[rank] = ProcState::kDone;
        return;
      }
    }
    std::exception_ptr failure;
    try {
      Comm comm(*this, grid_, rank);
      program(comm);
      if (!outstanding_[rank].empty()) {
        throw SimulationFault(to_string(grid_.coord(rank)) + " finished with " +
                              std::to_string(outstanding_[rank].size()) +
                              " un-waited async handle(s)");
      }
    } catch (const AbortSignal&) {
    } catch (...) {
      failure = std::current_exception();
    }
    std::lock_guard lk(mu_);
    state_[rank] = ProcState::kDone;
    if (failure && !error_) {
      error_ = failure;
      aborted_ = true;
      cv_.notify_all();
      return;
    }
    if (!aborted_) hand_off(rank);
  }

  bool runnable(std::size_t rank) const {
    if (state_[rank] == ProcState::kReady) return true;
    if (state_[rank] == ProcState::kBlocked) {
      auto it = channels_.find(blocked_on_[rank]);
      return it != channels_.end() && !it->second.empty();
    }
    return false;
  }

  // Called with mu_ held by the processor giving up the baton.
  void hand_off(std::size_t from) {
    const std::size_t n = grid_.size();
    for (std::size_t k = 1; k <= n; ++k) {
      const std::size_t cand = (from + k) % n;
      if (runnable(cand)) {
        current_ = cand;
        cv_.notify_all();
        return;
      }
    }
    bool all_done = true;
    for (auto s : state_) all_done = all_done && s == ProcState::kDone;
    if (all_done) {
      current_ = n;
      cv_.notify_all();
      return;
    }
    std::ostringstream os;
    os << "deadlock:";
    for (std::size_t r = 0; r < n; ++r) {
      if (state_[r] != ProcState::kBlocked) continue;
      os << " " << to_string(grid_.coord(r)) << " waits on '" << blocked_on_[r].tag
         << "' from " << to_string(grid_.coord(blocked_on_[r].src)) << ";";
    }
    error_ = std::make_exception_ptr(DeadlockError(os.str()));
    aborted_ = true;
    cv_.notify_all();
  }

  const ProcGrid& grid_;
  CommLedger& ledger_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t current_ = 0;
  bool aborted_ = false;
  std::exception_ptr error_;
  std::vector<ProcState> state_;
  std::vector<ChannelKey> blocked_on_;
  std::map<ChannelKey, std::deque<Message>> channels_;
  std::vector<std::set<const PendingTransfer*>> outstanding_;
  std::vector<std::map<std::string, std::size_t>> live_;
  std::map<std::string, std::size_t> peak_;
};

void run_programs(const ProcGrid& grid, const std::function<void(Comm&)>& program,
                  CommLedger& ledger, SimStats& stats) {
  Fabric fabric(grid, ledger);
  fabric.run(program, stats);
}

}  // namespace detail

Comm::Comm(detail::Fabric& fabric, const ProcGrid& grid, std::size_t rank)
    : fabric_(fabric), grid_(grid), rank_(rank) {}

void Comm::post_message(std::size_t to, std::string_view op, detail::Message msg, bool charge) {
  fabric_.post(rank_, to, op, std::move(msg), phase_, charge);
}

detail::Message Comm::take(ProcCoord from, std::string_view op, const Signature& expected,
                           bool charge) {
  detail::Message msg = fabric_.take(rank_, grid_.rank(from), op, phase_, charge);
  if (msg.signature != expected) {
    throw ShapeError("'" + std::string(op) + "': payload from " + to_string(from) +
                     " does not match the expected shape on " + to_string(coord()));
  }
  return msg;
}

void Comm::wait(AsyncHandle& handle) {
  auto& t = handle.transfer_;
  if (!t) throw SimulationFault("wait on an unbound handle");
  if (t->owner != rank_) throw SimulationFault("wait on a handle owned by another processor");
  if (t->waited) throw SimulationFault("handle for '" + t->op + "' waited twice");
  if (!t->self) {
    const Phase saved = phase_;
    phase_ = t->phase;
    detail::Message msg;
    try {
      msg = take(grid_.coord(t->peer_from), t->op, t->expected, /*charge=*/true);
    } catch (...) {
      phase_ = saved;
      throw;
    }
    phase_ = saved;
    if (t->peer_to != rank_) fabric_.charge_send(rank_, t->phase, t->op, t->words_out);
    t->data = std::move(msg.data);
  }
  t->waited = true;
  fabric_.untrack(rank_, t.get());
}

void Comm::track(const std::shared_ptr<detail::PendingTransfer>& t) { fabric_.track(rank_, t); }

void Comm::acquire_buffer(const std::string& stream) { fabric_.acquire(rank_, stream); }
void Comm::release_buffer(const std::string& stream) { fabric_.release(rank_, stream); }

std::size_t Comm::index_in(std::span<const ProcCoord> group) const {
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (group[i] == coord()) return i;
  }
  throw ConfigError(to_string(coord()) + " is not a member of the collective group");
}

void Comm::check_partition(const std::vector<std::vector<std::size_t>>& layout,
                           std::size_t rows) {
  std::vector<bool> seen(rows, false);
  std::size_t count = 0;
  for (const auto& slice : layout) {
    for (std::size_t i : slice) {
      if (i >= rows || seen[i]) throw ShapeError("reduce_scatter: layout is not a partition");
      seen[i] = true;
      ++count;
    }
  }
  if (count != rows) throw ShapeError("reduce_scatter: layout does not cover every row");
}

}  // namespace attn2d::mesh
