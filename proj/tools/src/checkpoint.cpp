#include "cpat/cli/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cpat::cli {
namespace {

constexpr std::size_t kMagicSize = sizeof(kCheckpointMagic) - 1;

void put_u64(std::string& out, std::uint64_t x, int bytes = 8) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos, int bytes = 8) {
  std::uint64_t x = 0;
  for (int i = 0; i < bytes; ++i) x |= std::uint64_t{static_cast<unsigned char>(in[pos + i])} << (8 * i);
  return x;
}

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

Eigen::Index header_index(const std::map<std::string, std::string>& h, const std::string& key) {
  const auto it = h.find(key);
  if (it == h.end()) throw CheckpointError("checkpoint: header is missing '" + key + "'");
  try {
    return std::stol(it->second);
  } catch (const std::exception&) {
    throw CheckpointError("checkpoint: bad header value for '" + key + "'");
  }
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  const ModelDims dims = checkpoint.params.dims();
  const ParamLayout layout(dims);
  std::ostringstream header;
  header << "version=1\n"
         << "vocab=" << dims.vocab << "\n"
         << "dim=" << dims.dim << "\n"
         << "latent=" << dims.latent << "\n"
         << "hidden=" << dims.hidden << "\n"
         << "gen_hidden=" << dims.gen_hidden << "\n"
         << "dropout=" << hex_double(checkpoint.params.theta.dropout_rate) << "\n";
  for (const auto& [key, value] : checkpoint.meta) {
    if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos)
      throw CheckpointError("checkpoint: meta entries must be single-line key=value pairs");
    header << "meta." << key << "=" << value << "\n";
  }
  for (const auto& seg : layout.segments())
    header << "segment=" << seg.name << " " << seg.offset << " " << seg.rows << " " << seg.cols << "\n";

  const std::string text = header.str();
  const Vector flat = pack(checkpoint.params);
  std::string out(kCheckpointMagic, kMagicSize);
  put_u64(out, text.size(), 4);
  out += text;
  put_u64(out, static_cast<std::uint64_t>(flat.size()));
  const std::size_t payload_begin = out.size();
  for (Eigen::Index i = 0; i < flat.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(flat[i]));
  put_u64(out, fnv1a(out.data() + payload_begin, out.size() - payload_begin));
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::optional<ModelDims>& expected) {
  if (bytes.size() < kMagicSize || bytes.compare(0, kMagicSize, kCheckpointMagic) != 0)
    throw CheckpointError("checkpoint: unknown magic");
  std::size_t pos = kMagicSize;
  if (bytes.size() < pos + 4) throw CheckpointError("checkpoint: checksum mismatch (truncated header)");
  const std::size_t header_len = get_u64(bytes, pos, 4);
  pos += 4;
  if (bytes.size() < pos + header_len + 8) throw CheckpointError("checkpoint: checksum mismatch (truncated header)");

  std::map<std::string, std::string> header;
  std::vector<std::string> segment_lines;
  Checkpoint checkpoint;
  std::istringstream lines(bytes.substr(pos, header_len));
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("checkpoint: malformed header line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "segment") segment_lines.push_back(value);
    else if (key.rfind("meta.", 0) == 0) checkpoint.meta[key.substr(5)] = value;
    else header[key] = value;
  }
  pos += header_len;
  if (header["version"] != "1") throw CheckpointError("checkpoint: unsupported version '" + header["version"] + "'");

  const ModelDims dims{header_index(header, "vocab"), header_index(header, "dim"), header_index(header, "latent"),
                       header_index(header, "hidden"), header_index(header, "gen_hidden")};
  const ParamLayout layout(dims);
  const std::uint64_t count = get_u64(bytes, pos);
  pos += 8;
  if (count != layout.size()) throw CheckpointError("checkpoint: payload size does not match the header dims");
  if (bytes.size() != pos + 8 * count + 8) throw CheckpointError("checkpoint: checksum mismatch (truncated payload)");
  if (fnv1a(bytes.data() + pos, 8 * count) != get_u64(bytes, pos + 8 * count))
    throw CheckpointError("checkpoint: checksum mismatch");

  if (segment_lines.size() != layout.segments().size())
    throw CheckpointError("checkpoint: segment map does not match the parameter layout");
  for (std::size_t i = 0; i < segment_lines.size(); ++i) {
    const ParamSegment& seg = layout.segments()[i];
    std::ostringstream want;
    want << seg.name << " " << seg.offset << " " << seg.rows << " " << seg.cols;
    if (segment_lines[i] != want.str())
      throw CheckpointError("checkpoint: segment map does not match the parameter layout");
  }
  if (expected && !(*expected == dims)) {
    std::ostringstream msg;
    msg << "checkpoint: dimension mismatch (checkpoint vocab=" << dims.vocab << " dim=" << dims.dim
        << ", run vocab=" << expected->vocab << " dim=" << expected->dim << ")";
    throw CheckpointError(msg.str());
  }

  Vector flat(static_cast<Eigen::Index>(count));
  for (std::uint64_t i = 0; i < count; ++i)
    flat[static_cast<Eigen::Index>(i)] = std::bit_cast<double>(get_u64(bytes, pos + 8 * i));
  const double dropout = std::strtod(header["dropout"].c_str(), nullptr);
  checkpoint.params = unpack(layout, flat, dropout);
  return checkpoint;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  const std::string bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path, const std::optional<ModelDims>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot read '" + path + "'");
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return decode_checkpoint(bytes.str(), expected);
}

}  // namespace cpat::cli
