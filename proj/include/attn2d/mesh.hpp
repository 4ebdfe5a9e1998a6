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

#pragma once

#include <any>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "attn2d/errors.hpp"
#include "attn2d/tensor.hpp"
#include "json.hpp"

namespace attn2d::mesh {

struct ProcCoord {
  std::size_t r = 0;
  std::size_t c = 0;
  auto operator<=>(const ProcCoord&) const = default;
};

std::string to_string(ProcCoord p);

// Logical processor grid. The 2D algorithms need square grids; a 1 x P line
// exists for the 1D ring baseline.
class ProcGrid {
 public:
  static ProcGrid square(std::size_t p);
  static ProcGrid line(std::size_t p);

  std::size_t size() const { return rows_ * cols_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool is_square() const { return rows_ == cols_; }
  // Side length of a square grid.
  std::size_t side() const;

  std::size_t rank(ProcCoord p) const;
  ProcCoord coord(std::size_t rank) const;
  bool contains(ProcCoord p) const { return p.r < rows_ && p.c < cols_; }

  std::vector<ProcCoord> row_group(std::size_t r) const;
  std::vector<ProcCoord> col_group(std::size_t c) const;

 private:
  ProcGrid(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {}
  std::size_t rows_;
  std::size_t cols_;
};

enum class Phase { kAttentionFwd, kAttentionBwd, kLayout, kCollectiveInternal };
const char* to_string(Phase phase);

struct Counters {
  std::uint64_t words_sent = 0;
  std::uint64_t words_received = 0;
  std::uint64_t messages_sent = 0;
  std::uint64_t messages_received = 0;

  Counters& operator+=(const Counters& o);
  bool operator==(const Counters&) const = default;
};

// Scalar words and messages per processor, phase and operation label.
class CommLedger {
 public:
  struct Key {
    std::size_t rank;
    Phase phase;
    std::string op;
    auto operator<=>(const Key&) const = default;
  };

  void record_send(std::size_t rank, Phase phase, std::string_view op, std::uint64_t words);
  void record_receive(std::size_t rank, Phase phase, std::string_view op, std::uint64_t words);

  Counters total() const;
  Counters for_proc(std::size_t rank) const;
  Counters for_proc(std::size_t rank, Phase phase) const;
  Counters at(std::size_t rank, Phase phase, std::string_view op) const;
  const std::map<Key, Counters>& entries() const { return entries_; }
  // Test hook: perturbs one entry so verification paths can be exercised.
  void corrupt_for_testing(std::size_t rank, Phase phase, std::string_view op,
                           std::int64_t delta_words);

  nlohmann::json to_json(const ProcGrid& grid) const;
  bool operator==(const CommLedger&) const = default;

 private:
  std::map<Key, Counters> entries_;
};

// Matrices and vectors moved by one message. Words = total scalar count.
template <typename T>
struct Payload {
  std::vector<Matrix<T>> mats;
  std::vector<RealVector<T>> vecs;

  std::size_t words() const {
    std::size_t w = 0;
    for (const auto& m : mats) w += m.size();
    for (const auto& v : vecs) w += v.size();
    return w;
  }

  std::vector<std::pair<std::size_t, std::size_t>> signature() const {
    std::vector<std::pair<std::size_t, std::size_t>> s;
    for (const auto& m : mats) s.emplace_back(m.rows(), m.cols());
    for (const auto& v : vecs) s.emplace_back(v.size(), 0);
    return s;
  }

  // Common row count of every item (vectors count entries as rows).
  std::size_t rows() const {
    std::optional<std::size_t> r;
    auto check = [&r](std::size_t x) {
      if (r && *r != x) throw ShapeError("payload items disagree on row count");
      r = x;
    };
    for (const auto& m : mats) check(m.rows());
    for (const auto& v : vecs) check(v.size());
    return r.value_or(0);
  }

  Payload slice_rows(std::span<const std::size_t> idx) const {
    Payload out;
    for (const auto& m : mats) out.mats.push_back(select_rows(m, idx));
    for (const auto& v : vecs) out.vecs.push_back(select(v, idx));
    return out;
  }

  // Row-wise concatenation of equally structured payloads.
  static Payload concat(std::span<const Payload> parts) {
    Payload out;
    if (parts.empty()) return out;
    const auto& first = parts.front();
    for (std::size_t i = 0; i < first.mats.size(); ++i) {
      std::vector<Matrix<T>> blocks;
      for (const auto& p : parts) blocks.push_back(p.mats.at(i));
      out.mats.push_back(concat_rows<T>(blocks));
    }
    for (std::size_t i = 0; i < first.vecs.size(); ++i) {
      RealVector<T> v;
      for (const auto& p : parts) v.insert(v.end(), p.vecs.at(i).begin(), p.vecs.at(i).end());
      out.vecs.push_back(std::move(v));
    }
    return out;
  }

  bool operator==(const Payload&) const = default;
};

using Signature = std::vector<std::pair<std::size_t, std::size_t>>;

namespace detail {

struct Message {
  std::any data;
  std::uint64_t words = 0;
  Signature signature;
};

struct PendingTransfer {
  std::size_t owner = 0;
  std::size_t peer_to = 0;
  std::size_t peer_from = 0;
  std::string op;
  Phase phase = Phase::kAttentionFwd;
  std::uint64_t words_out = 0;
  Signature expected;
  bool self = false;
  bool waited = false;
  std::any data;
};

class Fabric;

}  // namespace detail

// Completion token of one async exchange; must be waited exactly once.
class AsyncHandle {
 public:
  AsyncHandle() = default;
  bool valid() const { return transfer_ != nullptr; }
  bool completed() const { return transfer_ && transfer_->waited; }

 private:
  friend class Comm;
  explicit AsyncHandle(std::shared_ptr<detail::PendingTransfer> t) : transfer_(std::move(t)) {}
  std::shared_ptr<detail::PendingTransfer> transfer_;
};

// Receive side of an async exchange; readable only after its handle is waited.
template <typename T>
class Incoming {
 public:
  Incoming() = default;
  const Payload<T>& get() const {
    if (!transfer_) throw SimulationFault("read of an unbound async buffer");
    if (!transfer_->waited) {
      throw SimulationFault("read of async buffer '" + transfer_->op + "' before wait");
    }
    return std::any_cast<const Payload<T>&>(transfer_->data);
  }
  bool ready() const { return transfer_ && transfer_->waited; }

 private:
  friend class Comm;
  explicit Incoming(std::shared_ptr<detail::PendingTransfer> t) : transfer_(std::move(t)) {}
  std::shared_ptr<detail::PendingTransfer> transfer_;
};

template <typename T>
struct AsyncExchange {
  Incoming<T> incoming;
  AsyncHandle handle;
};

template <typename T>
using Reducer = std::function<Payload<T>(const Payload<T>& local, const Payload<T>& incoming)>;

struct SimStats {
  std::size_t outstanding_handles = 0;
  // Highest number of simultaneously live buffers per stream, over all procs.
  std::map<std::string, std::size_t> peak_live_buffers;
};

// Per-processor view of the fabric handed to SPMD programs.
class Comm {
 public:
  Comm(detail::Fabric& fabric, const ProcGrid& grid, std::size_t rank);

  ProcCoord coord() const { return grid_.coord(rank_); }
  std::size_t rank() const { return rank_; }
  const ProcGrid& grid() const { return grid_; }

  Phase phase() const { return phase_; }
  void set_phase(Phase p) { phase_ = p; }

  // Blocking exchange: send `out` to `to`, receive from `from`. The incoming
  // payload must match `expected` (default: the shape of `out`).
  template <typename T>
  Payload<T> send_recv(const Payload<T>& out, ProcCoord to, ProcCoord from, std::string_view op,
                       std::optional<Signature> expected = std::nullopt) {
    if (to == coord() && from == coord()) return out;
    post(out, to, op);
    detail::Message msg = take(from, op, expected ? *expected : out.signature());
    return std::any_cast<Payload<T>>(std::move(msg.data));
  }

  // Starts an exchange and returns at once. The ledger is charged on wait().
  template <typename T>
  AsyncExchange<T> async_send_recv(const Payload<T>& out, ProcCoord to, ProcCoord from,
                                   std::string_view op) {
    auto t = std::make_shared<detail::PendingTransfer>();
    t->owner = rank_;
    t->peer_to = grid_.rank(to);
    t->peer_from = grid_.rank(from);
    t->op = std::string(op);
    t->phase = phase_;
    t->words_out = out.words();
    t->expected = out.signature();
    if (to == coord() && from == coord()) {
      t->self = true;
      t->data = out;
    } else {
      post_uncharged(out, to, op);
    }
    track(t);
    return {Incoming<T>(t), AsyncHandle(t)};
  }

  void wait(AsyncHandle& handle);

  // Ring all-gather; returns the members' shards in group order.
  template <typename T>
  std::vector<Payload<T>> all_gather_blocks(const Payload<T>& shard,
                                            std::span<const ProcCoord> group,
                                            std::string_view op) {
    const std::size_t g = group.size();
    const std::size_t me = index_in(group);
    std::vector<Payload<T>> blocks(g);
    blocks[me] = shard;
    const ProcCoord right = group[(me + 1) % g];
    const ProcCoord left = group[(me + g - 1) % g];
    for (std::size_t step = 0; step + 1 < g; ++step) {
      const std::size_t send_idx = (me + g - step) % g;
      const std::size_t recv_idx = (me + g - step - 1) % g;
      blocks[recv_idx] = send_recv(blocks[send_idx], right, left, op);
    }
    return blocks;
  }

  template <typename T>
  Payload<T> all_gather(const Payload<T>& shard, std::span<const ProcCoord> group,
                        std::string_view op) {
    const auto blocks = all_gather_blocks(shard, group, op);
    return Payload<T>::concat(blocks);
  }

  // Ring reduce-scatter. `layout[k]` lists the rows of `data` that member k
  // keeps; the lists must partition the rows. Each step sends one slice to
  // the left neighbour and folds the slice received from the right with
  // reducer(local, incoming).
  template <typename T>
  Payload<T> reduce_scatter(const Payload<T>& data, std::span<const ProcCoord> group,
                            const Reducer<T>& reducer,
                            const std::vector<std::vector<std::size_t>>& layout,
                            std::string_view op) {
    const std::size_t g = group.size();
    if (layout.size() != g) throw ShapeError("reduce_scatter: one slice per member required");
    check_partition(layout, data.rows());
    const std::size_t me = index_in(group);
    const ProcCoord right = group[(me + 1) % g];
    const ProcCoord left = group[(me + g - 1) % g];
    Payload<T> acc = data.slice_rows(layout[(me + 1) % g]);
    for (std::size_t i = 2; i <= g; ++i) {
      const std::size_t idx = (me + i) % g;
      Payload<T> incoming = send_recv(acc, left, right, op, data.slice_rows(layout[idx]).signature());
      acc = reducer(data.slice_rows(layout[idx]), incoming);
    }
    return acc;
  }

  // Live-buffer gauge for double-buffered streams; faults above the limit.
  void acquire_buffer(const std::string& stream);
  void release_buffer(const std::string& stream);

 private:
  template <typename T>
  void post(const Payload<T>& out, ProcCoord to, std::string_view op) {
    detail::Message msg{out, out.words(), out.signature()};
    post_message(grid_.rank(to), op, std::move(msg), /*charge=*/true);
  }
  template <typename T>
  void post_uncharged(const Payload<T>& out, ProcCoord to, std::string_view op) {
    detail::Message msg{out, out.words(), out.signature()};
    post_message(grid_.rank(to), op, std::move(msg), /*charge=*/false);
  }
  void post_message(std::size_t to, std::string_view op, detail::Message msg, bool charge);
  detail::Message take(ProcCoord from, std::string_view op, const Signature& expected,
                       bool charge = true);
  void track(const std::shared_ptr<detail::PendingTransfer>& t);
  std::size_t index_in(std::span<const ProcCoord> group) const;
  static void check_partition(const std::vector<std::vector<std::size_t>>& layout,
                              std::size_t rows);

  detail::Fabric& fabric_;
  const ProcGrid& grid_;
  std::size_t rank_;
  Phase phase_ = Phase::kAttentionFwd;
};

// Sets the ledger phase for the lifetime of the scope.
class PhaseScope {
 public:
  PhaseScope(Comm& comm, Phase p) : comm_(comm), saved_(comm.phase()) { comm.set_phase(p); }
  ~PhaseScope() { comm_.set_phase(saved_); }
  PhaseScope(const PhaseScope&) = delete;
  PhaseScope& operator=(const PhaseScope&) = delete;

 private:
  Comm& comm_;
  Phase saved_;
};

// Two-slot buffer for a ring stream: the front slot is computed on while the
// back slot receives the next block. Needing a third slot is a fault.
template <typename T>
class DoubleBuffer {
 public:
  DoubleBuffer(Comm& comm, std::string stream, Payload<T> initial)
      : comm_(comm), stream_(std::move(stream)) {
    comm_.acquire_buffer(stream_);
    slots_[0].held = std::move(initial);
    slots_[0].state = SlotState::kHeld;
  }
  ~DoubleBuffer() {
    for (auto& s : slots_) {
      if (s.state != SlotState::kEmpty) comm_.release_buffer(stream_);
    }
  }
  DoubleBuffer(const DoubleBuffer&) = delete;
  DoubleBuffer& operator=(const DoubleBuffer&) = delete;

  const Payload<T>& front() const {
    const Slot& s = slots_[front_];
    if (s.state == SlotState::kIncoming) return s.incoming.get();
    if (s.state == SlotState::kEmpty) {
      throw SimulationFault("stream '" + stream_ + "': read of an empty buffer slot");
    }
    return s.held;
  }

  // Sends the front block to `to` and receives the next one from `from`
  // into the back slot.
  void exchange_async(ProcCoord to, ProcCoord from, std::string_view op) {
    Slot& back = slots_[1 - front_];
    if (back.state != SlotState::kEmpty || pending_.valid()) {
      comm_.acquire_buffer(stream_);  // a third live buffer: faults
    }
    const Payload<T>& out = front();
    comm_.acquire_buffer(stream_);
    auto ex = comm_.async_send_recv(out, to, from, op);
    back.incoming = ex.incoming;
    back.state = SlotState::kIncoming;
    sending_ = front_;
    pending_ = ex.handle;
  }

  // Completes the outstanding exchange; the slot that was being sent is freed.
  void wait() {
    comm_.wait(pending_);
    pending_ = AsyncHandle();
    for (std::size_t i = 0; i < 2; ++i) {
      if (slots_[i].state == SlotState::kIncoming) {
        slots_[i].held = slots_[i].incoming.get();
        slots_[i].incoming = Incoming<T>();
        slots_[i].state = SlotState::kHeld;
      }
    }
    if (sending_) {
      slots_[*sending_] = Slot{};
      comm_.release_buffer(stream_);
      sending_.reset();
    }
  }

  void swap() {
    front_ = 1 - front_;
  }

 private:
  enum class SlotState { kEmpty, kHeld, kIncoming };
  struct Slot {
    SlotState state = SlotState::kEmpty;
    Payload<T> held;
    Incoming<T> incoming;
  };

  Comm& comm_;
  std::string stream_;
  Slot slots_[2];
  std::size_t front_ = 0;
  std::optional<std::size_t> sending_;
  AsyncHandle pending_;
};

template <typename R>
struct SpmdResult {
  std::vector<R> results;  // rank order
  CommLedger ledger;
  SimStats stats;
};

namespace detail {
// Runs `program` once per processor under the deterministic round-robin
// scheduler. Rethrows the first processor failure or a DeadlockError.
void run_programs(const ProcGrid& grid, const std::function<void(Comm&)>& program,
                  CommLedger& ledger, SimStats& stats);
}  // namespace detail

template <typename Program>
auto run_spmd(const ProcGrid& grid, Program&& program)
    -> SpmdResult<std::invoke_result_t<Program&, Comm&>> {
  using R = std::invoke_result_t<Program&, Comm&>;
  std::vector<std::optional<R>> slots(grid.size());
  SpmdResult<R> out;
  detail::run_programs(
      grid, [&](Comm& comm) { slots[comm.rank()].emplace(program(comm)); }, out.ledger,
      out.stats);
  out.results.reserve(slots.size());
  for (auto& s : slots) out.results.push_back(std::move(*s));
  return out;
}

}  // namespace attn2d::mesh
