#include "nica/tensor_file.hpp"

#include <cstring>
#include <fstream>

namespace nica {

namespace {

constexpr char kMagic[4] = {'T', 'P', 'N', 'C'};
constexpr std::uint8_t kVersion = 0x01;
constexpr std::uint8_t kDtypeFloat64 = 0x01;
constexpr std::uint8_t kMaxRank = 8;

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

double get_f64(std::istream& in) {
  std::uint64_t bits = get_u64(in);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

std::uint64_t Tensor::count() const {
  std::uint64_t total = 1;
  for (std::uint64_t d : dims) total *= d;
  return total;
}

Tensor Tensor::from_matrix(const Mat& m) {
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data.reserve(m.size());
  for (long r = 0; r < m.rows(); ++r)
    for (long c = 0; c < m.cols(); ++c) t.data.push_back(m(r, c));
  return t;
}

Tensor Tensor::from_vector(const Vec& v) {
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(v.size())};
  t.data.assign(v.data(), v.data() + v.size());
  return t;
}

Tensor Tensor::from_stack(const std::vector<Mat>& mats) {
  require(!mats.empty(), ErrorKind::Config, "tensor: empty stack");
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(mats.size()),
            static_cast<std::uint64_t>(mats.front().rows()),
            static_cast<std::uint64_t>(mats.front().cols())};
  for (const Mat& m : mats) {
    require(m.rows() == mats.front().rows() && m.cols() == mats.front().cols(),
            ErrorKind::Config, "tensor: stack entries must share one shape");
    for (long r = 0; r < m.rows(); ++r)
      for (long c = 0; c < m.cols(); ++c) t.data.push_back(m(r, c));
  }
  return t;
}

Mat Tensor::to_matrix() const {
  require(dims.size() == 2, ErrorKind::Config, "tensor: rank-2 tensor expected");
  Mat m(static_cast<long>(dims[0]), static_cast<long>(dims[1]));
  std::size_t at = 0;
  for (long r = 0; r < m.rows(); ++r)
    for (long c = 0; c < m.cols(); ++c) m(r, c) = data[at++];
  return m;
}

Vec Tensor::to_vector() const {
  require(dims.size() == 1, ErrorKind::Config, "tensor: rank-1 tensor expected");
  Vec v(static_cast<long>(dims[0]));
  for (long i = 0; i < v.size(); ++i) v[i] = data[i];
  return v;
}

std::vector<Mat> Tensor::to_stack() const {
  require(dims.size() == 3, ErrorKind::Config, "tensor: rank-3 tensor expected");
  std::vector<Mat> out;
  const long rows = static_cast<long>(dims[1]);
  const long cols = static_cast<long>(dims[2]);
  std::size_t at = 0;
  for (std::uint64_t s = 0; s < dims[0]; ++s) {
    Mat m(rows, cols);
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c) m(r, c) = data[at++];
    out.push_back(std::move(m));
  }
  return out;
}

void write_tensor(const std::string& path, const Tensor& tensor) {
  require(!tensor.dims.empty() && tensor.dims.size() <= kMaxRank, ErrorKind::Config,
          "tensor: unsupported rank");
  require(tensor.count() == tensor.data.size(), ErrorKind::Config,
          "tensor: dimension/payload mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::Config, "tensor: cannot open for writing: " + path);
  out.write(kMagic, 4);
  out.put(static_cast<char>(kVersion));
  out.put(static_cast<char>(tensor.dims.size()));
  for (std::uint64_t d : tensor.dims) put_u64(out, d);
  out.put(static_cast<char>(kDtypeFloat64));
  for (double d : tensor.data) put_f64(out, d);
  require(out.good(), ErrorKind::Config, "tensor: write failed: " + path);
}

Tensor read_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Config, "tensor: cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  require(in.good() && std::memcmp(magic, kMagic, 4) == 0, ErrorKind::Config,
          "tensor: bad magic in " + path);
  const int version = in.get();
  require(version == kVersion, ErrorKind::Config,
          "tensor: unsupported format version in " + path);
  const int rank = in.get();
  require(rank >= 1 && rank <= kMaxRank, ErrorKind::Config,
          "tensor: unsupported rank in " + path);
  Tensor t;
  for (int i = 0; i < rank; ++i) t.dims.push_back(get_u64(in));
  const int dtype = in.get();
  require(dtype == kDtypeFloat64, ErrorKind::Config,
          "tensor: unsupported dtype in " + path);
  const std::uint64_t total = t.count();
  require(total < (1ull << 32), ErrorKind::Config, "tensor: implausible size in " + path);
  t.data.resize(total);
  for (std::uint64_t i = 0; i < total; ++i) t.data[i] = get_f64(in);
  require(in.good(), ErrorKind::Config, "tensor: truncated payload in " + path);
  return t;
}

}  // namespace nica
