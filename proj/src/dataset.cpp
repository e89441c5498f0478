#include "dinewton/dataset.hpp"

#include <zlib.h>

#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>
#include <vector>

namespace dinewton {

namespace {

bool parse_real(std::string_view tok, Real& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool parse_index(std::string_view tok, long& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::string_view next_token(std::string_view& rest) {
  size_t b = rest.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) {
    rest = {};
    return {};
  }
  size_t e = rest.find_first_of(" \t\r", b);
  std::string_view tok = rest.substr(b, e == std::string_view::npos ? e : e - b);
  rest = e == std::string_view::npos ? std::string_view{} : rest.substr(e);
  return tok;
}

}  // namespace

SparseDataset parse_libsvm(std::istream& in) {
  std::vector<Eigen::Triplet<Real>> entries;
  std::vector<Real> labels;
  Index max_feature = 0;
  std::string line;
  long lineno = 0;

  while (std::getline(in, line)) {
    ++lineno;
    std::string_view rest(line);
    std::string_view tok = next_token(rest);
    if (tok.empty()) throw ParseError("blank line", lineno);

    Real label;
    if (!parse_real(tok, label)) throw ParseError("bad label", lineno);
    labels.push_back(label);
    const Index sample = static_cast<Index>(labels.size()) - 1;

    long prev_idx = 0;  // indices are 1-based and strictly ascending
    while (!(tok = next_token(rest)).empty()) {
      size_t colon = tok.find(':');
      if (colon == std::string_view::npos || colon == 0 ||
          colon + 1 == tok.size()) {
        throw ParseError("expected idx:val", lineno);
      }
      long idx;
      Real val;
      if (!parse_index(tok.substr(0, colon), idx) || idx < 1) {
        throw ParseError("bad feature index", lineno);
      }
      if (!parse_real(tok.substr(colon + 1), val)) {
        throw ParseError("bad feature value", lineno);
      }
      if (idx <= prev_idx) throw ParseError("non-ascending feature index", lineno);
      prev_idx = idx;
      max_feature = std::max<Index>(max_feature, idx);
      entries.emplace_back(static_cast<Index>(idx - 1), sample, val);
    }
  }

  if (labels.empty()) throw IoError("empty dataset file");

  SparseDataset ds;
  ds.n = static_cast<Index>(labels.size());
  ds.d = max_feature;
  ds.labels = Eigen::Map<const Vector>(labels.data(), ds.n);
  ds.X.resize(ds.d, ds.n);
  ds.X.setFromTriplets(entries.begin(), entries.end());
  ds.X.makeCompressed();
  return ds;
}

SparseDataset load_libsvm_file(const std::string& path) {
  if (path.size() > 3 && path.substr(path.size() - 3) == ".gz") {
    gzFile gz = gzopen(path.c_str(), "rb");
    if (!gz) throw IoError("cannot open " + path);
    std::string text;
    char buf[1 << 16];
    int got;
    while ((got = gzread(gz, buf, sizeof buf)) > 0) {
      text.append(buf, static_cast<size_t>(got));
    }
    const bool bad = got < 0;
    gzclose(gz);
    if (bad) throw IoError("gzip read error in " + path);
    std::istringstream in(text);
    return parse_libsvm(in);
  }
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_libsvm(in);
}

Partition make_partition(PartitionMode mode, Index extent, Index blocks) {
  if (blocks < 1) throw ConfigError("node count must be >= 1");
  if (blocks > extent) {
    throw ConfigError("more nodes than the partitioned dimension (" +
                      std::to_string(blocks) + " > " + std::to_string(extent) +
                      ")");
  }
  Partition p{mode, {}};
  p.boundaries.resize(blocks + 1);
  const Index base = extent / blocks;
  const Index extra = extent % blocks;  // first `extra` blocks get one more
  p.boundaries[0] = 0;
  for (Index j = 0; j < blocks; ++j) {
    p.boundaries[j + 1] = p.boundaries[j] + base + (j < extra ? 1 : 0);
  }
  return p;
}

std::vector<DatasetShard> partition(const SparseDataset& ds, Index m,
                                    PartitionMode mode) {
  const Index extent = mode == PartitionMode::BySamples ? ds.n : ds.d;
  const Partition p = make_partition(mode, extent, m);

  std::vector<DatasetShard> shards;
  shards.reserve(static_cast<size_t>(m));
  for (Index j = 0; j < m; ++j) {
    DatasetShard s;
    s.node_id = static_cast<int>(j);
    s.mode = mode;
    s.global_n = ds.n;
    s.global_d = ds.d;
    s.offset = p.begin(j);
    if (mode == PartitionMode::BySamples) {
      s.local = ds.X.middleCols(p.begin(j), p.size(j));
      s.labels = ds.labels.segment(p.begin(j), p.size(j));
    } else {
      s.local = ds.X.middleRows(p.begin(j), p.size(j));
      s.labels = ds.labels;
    }
    s.local.makeCompressed();
    shards.push_back(std::move(s));
  }
  return shards;
}

}  // namespace dinewton
