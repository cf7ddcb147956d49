#include "emoformer/emof.hpp"

#include <cstring>
#include <fstream>

#include "emoformer/errors.hpp"

namespace emoformer::emof {

namespace {

void put_u32(std::string& out, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  out.append(b, 4);
}

class Reader {
 public:
  Reader(std::string bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  uint32_t u32() {
    need(4, "u32");
    const uint8_t* p = reinterpret_cast<const uint8_t*>(bytes_.data() + off_);
    uint32_t v = static_cast<uint32_t>(p[0]) |
                 (static_cast<uint32_t>(p[1]) << 8) |
                 (static_cast<uint32_t>(p[2]) << 16) |
                 (static_cast<uint32_t>(p[3]) << 24);
    off_ += 4;
    return v;
  }

  std::string str(size_t len) {
    need(len, "string");
    std::string s = bytes_.substr(off_, len);
    off_ += len;
    return s;
  }

  std::vector<float> floats(size_t count) {
    need(count * 4, "f32 payload");
    std::vector<float> v(count);
    std::memcpy(v.data(), bytes_.data() + off_, count * 4);
    off_ += count * 4;
    return v;
  }

  void expect_magic() {
    need(4, "magic");
    if (bytes_.compare(0, 4, "EMOF") != 0)
      throw FormatError("'" + path_ + "': missing EMOF magic", 0);
    off_ = 4;
  }

  size_t offset() const { return off_; }
  bool at_end() const { return off_ == bytes_.size(); }

 private:
  void need(size_t n, const char* what) {
    if (off_ + n > bytes_.size())
      throw FormatError("'" + path_ + "': truncated while reading " +
                            std::string(what),
                        off_);
  }

  std::string bytes_;
  std::string path_;
  size_t off_ = 0;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("emof: cannot open '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("emof: cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("emof: write failed for '" + path + "'");
}

void append_payload(std::string& out, const Array& array) {
  if (array.data.size() != array.numel())
    throw ValidationError("emof: array payload size does not match dims");
  put_u32(out, kDtypeF32);
  put_u32(out, static_cast<uint32_t>(array.dims.size()));
  for (uint32_t d : array.dims) put_u32(out, d);
  const size_t bytes = array.data.size() * 4;
  size_t pos = out.size();
  out.resize(pos + bytes);
  std::memcpy(out.data() + pos, array.data.data(), bytes);
}

Array read_payload(Reader& r, const std::string& path) {
  const uint32_t dtype = r.u32();
  if (dtype != kDtypeF32)
    throw FormatError("'" + path + "': unsupported dtype code " +
                          std::to_string(dtype),
                      r.offset() - 4);
  const uint32_t ndim = r.u32();
  if (ndim > 8)
    throw FormatError("'" + path + "': implausible ndim " +
                          std::to_string(ndim),
                      r.offset() - 4);
  Array a;
  a.dims.resize(ndim);
  size_t numel = 1;
  for (uint32_t i = 0; i < ndim; ++i) {
    a.dims[i] = r.u32();
    numel *= a.dims[i];
  }
  a.data = r.floats(numel);
  return a;
}

}  // namespace

void write_array(const std::string& path, const Array& array) {
  std::string out;
  out.append("EMOF");
  put_u32(out, kVersion);
  append_payload(out, array);
  write_file(path, out);
}

Array read_array(const std::string& path) {
  Reader r(slurp(path), path);
  r.expect_magic();
  const uint32_t version = r.u32();
  if (version != kVersion)
    throw FormatError("'" + path + "': unsupported version " +
                          std::to_string(version),
                      4);
  Array a = read_payload(r, path);
  if (!r.at_end())
    throw FormatError("'" + path + "': trailing bytes after payload",
                      r.offset());
  return a;
}

const Array* NamedArrays::find(const std::string& name) const {
  for (const auto& [n, a] : arrays)
    if (n == name) return &a;
  return nullptr;
}

const Array& NamedArrays::at(const std::string& name) const {
  const Array* a = find(name);
  if (!a)
    throw FormatError("emof: named array '" + name + "' not found", 0);
  return *a;
}

void NamedArrays::add(const std::string& name, Array array) {
  if (find(name) != nullptr)
    throw ValidationError("emof: named array '" + name + "' added twice");
  arrays.emplace_back(name, std::move(array));
}

void write_named(const std::string& path, const NamedArrays& file) {
  std::string out;
  out.append("EMOF");
  put_u32(out, kVersion);
  put_u32(out, kNamedTable);
  put_u32(out, static_cast<uint32_t>(file.json_header.size()));
  out.append(file.json_header);
  put_u32(out, static_cast<uint32_t>(file.arrays.size()));
  for (const auto& [name, array] : file.arrays) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.append(name);
    append_payload(out, array);
  }
  write_file(path, out);
}

NamedArrays read_named(const std::string& path) {
  Reader r(slurp(path), path);
  r.expect_magic();
  const uint32_t version = r.u32();
  if (version != kVersion)
    throw FormatError("'" + path + "': unsupported version " +
                          std::to_string(version),
                      4);
  const uint32_t marker = r.u32();
  if (marker != kNamedTable)
    throw FormatError("'" + path +
                          "': not a named-array file (marker " +
                          std::to_string(marker) + ")",
                      8);
  NamedArrays file;
  file.json_header = r.str(r.u32());
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u32());
    file.arrays.emplace_back(std::move(name), read_payload(r, path));
  }
  if (!r.at_end())
    throw FormatError("'" + path + "': trailing bytes after array table",
                      r.offset());
  return file;
}

}  // namespace emoformer::emof
