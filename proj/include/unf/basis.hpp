#pragma once

// Enumerate valid partitions of an ordered tensor pair's index slots and
// compile each into a basis descriptor. A partition is valid when every
// block is name-homogeneous, so validity factorizes over name classes:
// per class we enumerate set partitions by restricted-growth strings and
// take the cartesian product across classes (first class slowest).

#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "unf/errors.hpp"
#include "unf/wspec.hpp"

namespace unf {

using bigint = boost::multiprecision::cpp_int;

enum class SlotSide { output, input };

struct IndexSlot {
  SlotSide side;
  int position;
  std::string dim_name;

  friend bool operator==(const IndexSlot&, const IndexSlot&) = default;
};

inline bool slot_less(const IndexSlot& a, const IndexSlot& b) {
  if (a.side != b.side) return a.side == SlotSide::output;
  return a.position < b.position;
}

// Blocks are kept canonically ordered: slots sorted within a block, blocks
// sorted by their smallest slot (outputs before inputs, then position).
struct Partition {
  std::vector<std::vector<IndexSlot>> blocks;

  friend bool operator==(const Partition&, const Partition&) = default;
};

// Block ids are indices into partition.blocks. sum_chars are blocks with no
// output slot, broadcast_chars blocks with no input slot; the rest carry.
struct BasisDescriptor {
  Partition partition;
  std::vector<std::string> block_names;
  std::vector<int> out_chars;
  std::vector<int> in_chars;
  std::vector<int> sum_chars;
  std::vector<int> broadcast_chars;

  std::vector<std::string> out_dims() const {
    std::vector<std::string> dims(out_chars.size());
    for (std::size_t a = 0; a < out_chars.size(); ++a) dims[a] = block_names[out_chars[a]];
    return dims;
  }
  std::vector<std::string> in_dims() const {
    std::vector<std::string> dims(in_chars.size());
    for (std::size_t a = 0; a < in_chars.size(); ++a) dims[a] = block_names[in_chars[a]];
    return dims;
  }

  friend bool operator==(const BasisDescriptor&, const BasisDescriptor&) = default;
};

inline bigint bell_number(int n) {
  if (n < 0) throw ShapeError("bell_number: negative argument");
  static std::mutex mu;
  static std::vector<bigint> bells{1, 1};
  static std::vector<bigint> row{1};
  std::scoped_lock lock(mu);
  while (static_cast<int>(bells.size()) <= n) {
    std::vector<bigint> next(row.size() + 1);
    next[0] = row.back();
    for (std::size_t i = 0; i < row.size(); ++i) next[i + 1] = next[i] + row[i];
    row = std::move(next);
    bells.push_back(row.back());
  }
  return bells[n];
}

namespace detail {

// All restricted-growth strings of length k in lexicographic order; the
// all-zero string (one block) comes first, all-distinct last.
inline std::vector<std::vector<int>> growth_strings(int k) {
  if (k == 0) return {{}};
  std::vector<std::vector<int>> out;
  std::vector<int> a(k, 0);
  std::vector<int> maxes(k, 0);  // maxes[i] = max(a[0..i-1])
  for (;;) {
    out.push_back(a);
    int i = k - 1;
    while (i > 0 && a[i] > maxes[i]) --i;
    if (i == 0) return out;
    ++a[i];
    for (int j = i + 1; j < k; ++j) {
      a[j] = 0;
      maxes[j] = std::max(maxes[j - 1], a[j - 1]);
    }
  }
}

struct NameClass {
  std::string name;
  std::vector<IndexSlot> slots;  // in canonical slot order
};

inline std::vector<NameClass> name_classes(const std::vector<std::string>& out_dims,
                                           const std::vector<std::string>& in_dims) {
  std::vector<NameClass> classes;
  auto add = [&](SlotSide side, const std::vector<std::string>& dims) {
    for (int p = 0; p < static_cast<int>(dims.size()); ++p) {
      IndexSlot slot{side, p, dims[p]};
      NameClass* cls = nullptr;
      for (auto& c : classes) {
        if (c.name == dims[p]) {
          cls = &c;
          break;
        }
      }
      if (!cls) {
        classes.push_back({dims[p], {}});
        cls = &classes.back();
      }
      cls->slots.push_back(std::move(slot));
    }
  };
  add(SlotSide::output, out_dims);
  add(SlotSide::input, in_dims);
  return classes;
}

}  // namespace detail

inline bigint partition_count(const std::vector<std::string>& out_dims,
                              const std::vector<std::string>& in_dims) {
  bigint count = 1;
  for (const auto& cls : detail::name_classes(out_dims, in_dims)) {
    count *= bell_number(static_cast<int>(cls.slots.size()));
  }
  return count;
}

inline std::vector<Partition> valid_partitions(const std::vector<std::string>& out_dims,
                                               const std::vector<std::string>& in_dims) {
  auto classes = detail::name_classes(out_dims, in_dims);
  std::vector<std::vector<std::vector<std::vector<IndexSlot>>>> per_class;
  for (const auto& cls : classes) {
    std::vector<std::vector<std::vector<IndexSlot>>> partitions;
    for (const auto& rgs : detail::growth_strings(static_cast<int>(cls.slots.size()))) {
      int nblocks = 1 + *std::max_element(rgs.begin(), rgs.end());
      std::vector<std::vector<IndexSlot>> blocks(nblocks);
      for (std::size_t i = 0; i < rgs.size(); ++i) blocks[rgs[i]].push_back(cls.slots[i]);
      partitions.push_back(std::move(blocks));
    }
    per_class.push_back(std::move(partitions));
  }

  std::vector<Partition> out;
  std::vector<std::size_t> pick(classes.size(), 0);
  for (;;) {
    Partition p;
    for (std::size_t k = 0; k < classes.size(); ++k) {
      for (const auto& block : per_class[k][pick[k]]) p.blocks.push_back(block);
    }
    std::sort(p.blocks.begin(), p.blocks.end(),
              [](const auto& a, const auto& b) { return slot_less(a.front(), b.front()); });
    out.push_back(std::move(p));
    std::size_t k = classes.size();
    while (k > 0) {
      --k;
      if (++pick[k] < per_class[k].size()) break;
      pick[k] = 0;
      if (k == 0) return out;
    }
    if (classes.empty()) return out;
  }
}

inline BasisDescriptor compile_basis(const Partition& p) {
  BasisDescriptor d;
  d.partition = p;
  int out_rank = 0;
  int in_rank = 0;
  for (const auto& block : p.blocks) {
    if (block.empty()) throw ShapeError("compile_basis: empty block");
    d.block_names.push_back(block.front().dim_name);
    for (const auto& slot : block) {
      if (slot.dim_name != block.front().dim_name) {
        throw ShapeError("compile_basis: block mixes dimension names");
      }
      if (slot.side == SlotSide::output) {
        out_rank = std::max(out_rank, slot.position + 1);
      } else {
        in_rank = std::max(in_rank, slot.position + 1);
      }
    }
  }
  d.out_chars.assign(out_rank, -1);
  d.in_chars.assign(in_rank, -1);
  for (int b = 0; b < static_cast<int>(p.blocks.size()); ++b) {
    bool has_out = false;
    bool has_in = false;
    for (const auto& slot : p.blocks[b]) {
      if (slot.side == SlotSide::output) {
        d.out_chars[slot.position] = b;
        has_out = true;
      } else {
        d.in_chars[slot.position] = b;
        has_in = true;
      }
    }
    if (!has_out) d.sum_chars.push_back(b);
    if (!has_in) d.broadcast_chars.push_back(b);
  }
  for (int c : d.out_chars) {
    if (c < 0) throw ShapeError("compile_basis: partition does not cover all output slots");
  }
  for (int c : d.in_chars) {
    if (c < 0) throw ShapeError("compile_basis: partition does not cover all input slots");
  }
  return d;
}

constexpr std::int64_t kDefaultBasisCap = 1000000;

inline std::vector<BasisDescriptor> pair_basis_dims(const std::vector<std::string>& out_dims,
                                                    const std::vector<std::string>& in_dims,
                                                    std::int64_t cap = kDefaultBasisCap) {
  bigint count = partition_count(out_dims, in_dims);
  if (count > cap) {
    throw CapError("basis count " + count.str() + " exceeds cap " + std::to_string(cap));
  }
  std::vector<BasisDescriptor> out;
  for (const auto& p : valid_partitions(out_dims, in_dims)) out.push_back(compile_basis(p));
  return out;
}

inline std::vector<BasisDescriptor> pair_basis(const WeightSpaceSpec& spec, const std::string& ell,
                                               const std::string& m,
                                               std::int64_t cap = kDefaultBasisCap) {
  const auto& out_decl = spec.tensor(spec.index_of(ell));
  const auto& in_decl = spec.tensor(spec.index_of(m));
  return pair_basis_dims(out_decl.dims, in_decl.dims, cap);
}

struct BasisCount {
  std::map<std::pair<std::string, std::string>, bigint> pairs;
  bigint total = 0;
};

inline BasisCount basis_count(const WeightSpaceSpec& spec) {
  BasisCount result;
  for (const auto& out_t : spec.tensors()) {
    for (const auto& in_t : spec.tensors()) {
      bigint c = partition_count(out_t.dims, in_t.dims);
      result.total += c;
      result.pairs[{out_t.id, in_t.id}] = std::move(c);
    }
  }
  return result;
}

// "ab←Σg W[ag]" rendering with block-id letters.
inline std::string block_char(int b) {
  if (b < 26) return std::string(1, static_cast<char>('a' + b));
  return "(" + std::to_string(b) + ")";
}

inline std::string descriptor_einsum(const BasisDescriptor& d) {
  std::string s;
  if (d.out_chars.empty()) s += "·";
  for (int c : d.out_chars) s += block_char(c);
  s += "←";
  if (!d.sum_chars.empty()) {
    s += "Σ";
    for (int c : d.sum_chars) s += block_char(c);
    s += " ";
  }
  s += "W[";
  for (int c : d.in_chars) s += block_char(c);
  s += "]";
  return s;
}

}  // namespace unf
