#include "brsda/npz.hpp"

#include <zlib.h>

#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

#include "brsda/errors.hpp"

namespace brsda::npz {

namespace {

// ---------------------------------------------------------------------------
// Little-endian scalar IO
// ---------------------------------------------------------------------------

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint16_t get_u16(const std::string& s, std::size_t off) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[off]) |
                                    (static_cast<unsigned char>(s[off + 1]) << 8));
}

std::uint32_t get_u32(const std::string& s, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) {
    v = (v << 8) | static_cast<unsigned char>(s[off + i]);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Raw deflate via zlib
// ---------------------------------------------------------------------------

std::string deflate_raw(const std::string& in) {
  z_stream zs;
  std::memset(&zs, 0, sizeof(zs));
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, -15, 8,
                   Z_DEFAULT_STRATEGY) != Z_OK) {
    throw DataError("npz: deflateInit2 failed");
  }
  std::string out;
  out.resize(deflateBound(&zs, in.size()));
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw DataError("npz: deflate failed");
  out.resize(out.size() - zs.avail_out);
  return out;
}

std::string inflate_raw(const std::string& in, std::size_t expected) {
  z_stream zs;
  std::memset(&zs, 0, sizeof(zs));
  if (inflateInit2(&zs, -15) != Z_OK) throw DataError("npz: inflateInit2 failed");
  std::string out(expected, '\0');
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.avail_out != 0) {
    throw DataError("npz: inflate failed or size mismatch");
  }
  return out;
}

std::uint32_t crc_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()),
            static_cast<uInt>(bytes.size())));
}

// ---------------------------------------------------------------------------
// Minimal zip reader/writer (no zip64; desk-scale archives)
// ---------------------------------------------------------------------------

struct ZipEntry {
  std::string name;
  std::string bytes;  // uncompressed
};

std::vector<ZipEntry> read_zip(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("npz: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string buf = ss.str();
  if (buf.size() < 22) throw DataError("npz: '" + path + "' is not a zip archive");

  // EOCD: scan backward (zip comments can push it off the end).
  std::size_t eocd = std::string::npos;
  const std::size_t lo = buf.size() > 66000 ? buf.size() - 66000 : 0;
  for (std::size_t i = buf.size() - 22 + 1; i-- > lo;) {
    if (get_u32(buf, i) == 0x06054b50u) {
      eocd = i;
      break;
    }
  }
  if (eocd == std::string::npos) {
    throw DataError("npz: end-of-central-directory not found in '" + path + "'");
  }
  const std::uint16_t n_entries = get_u16(buf, eocd + 10);
  std::size_t cd_off = get_u32(buf, eocd + 16);

  std::vector<ZipEntry> entries;
  for (std::uint16_t e = 0; e < n_entries; ++e) {
    if (get_u32(buf, cd_off) != 0x02014b50u) {
      throw DataError("npz: corrupt central directory in '" + path + "'");
    }
    const std::uint16_t method = get_u16(buf, cd_off + 10);
    const std::uint32_t crc = get_u32(buf, cd_off + 16);
    const std::uint32_t csize = get_u32(buf, cd_off + 20);
    const std::uint32_t usize = get_u32(buf, cd_off + 24);
    const std::uint16_t name_len = get_u16(buf, cd_off + 28);
    const std::uint16_t extra_len = get_u16(buf, cd_off + 30);
    const std::uint16_t comment_len = get_u16(buf, cd_off + 32);
    const std::uint32_t local_off = get_u32(buf, cd_off + 42);
    const std::string name = buf.substr(cd_off + 46, name_len);
    cd_off += 46 + name_len + extra_len + comment_len;

    if (get_u32(buf, local_off) != 0x04034b50u) {
      throw DataError("npz: corrupt local header for '" + name + "'");
    }
    const std::uint16_t local_name_len = get_u16(buf, local_off + 26);
    const std::uint16_t local_extra_len = get_u16(buf, local_off + 28);
    const std::size_t data_off = local_off + 30 + local_name_len + local_extra_len;
    const std::string raw = buf.substr(data_off, csize);

    std::string data;
    if (method == 0) {
      data = raw;
    } else if (method == 8) {
      data = inflate_raw(raw, usize);
    } else {
      throw DataError("npz: unsupported compression method for '" + name + "'");
    }
    if (crc_of(data) != crc) {
      throw DataError("npz: CRC mismatch for '" + name + "'");
    }
    entries.push_back({name, std::move(data)});
  }
  return entries;
}

void write_zip(const std::string& path, const std::vector<ZipEntry>& entries) {
  std::string out;
  struct CdRecord {
    std::string name;
    std::uint32_t crc, csize, usize, offset;
    std::uint16_t method;
  };
  std::vector<CdRecord> cd;

  for (const ZipEntry& e : entries) {
    std::string packed = deflate_raw(e.bytes);
    std::uint16_t method = 8;
    if (packed.size() >= e.bytes.size()) {  // store incompressible members
      packed = e.bytes;
      method = 0;
    }
    const std::uint32_t offset = static_cast<std::uint32_t>(out.size());
    const std::uint32_t crc = crc_of(e.bytes);
    put_u32(out, 0x04034b50u);
    put_u16(out, 20);      // version needed
    put_u16(out, 0);       // flags
    put_u16(out, method);
    put_u16(out, 0);       // mod time
    put_u16(out, 0);       // mod date
    put_u32(out, crc);
    put_u32(out, static_cast<std::uint32_t>(packed.size()));
    put_u32(out, static_cast<std::uint32_t>(e.bytes.size()));
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    put_u16(out, 0);       // extra len
    out += e.name;
    out += packed;
    cd.push_back({e.name, crc, static_cast<std::uint32_t>(packed.size()),
                  static_cast<std::uint32_t>(e.bytes.size()), offset, method});
  }

  const std::uint32_t cd_start = static_cast<std::uint32_t>(out.size());
  for (const CdRecord& r : cd) {
    put_u32(out, 0x02014b50u);
    put_u16(out, 20);  // version made by
    put_u16(out, 20);  // version needed
    put_u16(out, 0);
    put_u16(out, r.method);
    put_u16(out, 0);
    put_u16(out, 0);
    put_u32(out, r.crc);
    put_u32(out, r.csize);
    put_u32(out, r.usize);
    put_u16(out, static_cast<std::uint16_t>(r.name.size()));
    put_u16(out, 0);  // extra
    put_u16(out, 0);  // comment
    put_u16(out, 0);  // disk
    put_u16(out, 0);  // internal attrs
    put_u32(out, 0);  // external attrs
    put_u32(out, r.offset);
    out += r.name;
  }
  const std::uint32_t cd_size = static_cast<std::uint32_t>(out.size()) - cd_start;
  put_u32(out, 0x06054b50u);
  put_u16(out, 0);
  put_u16(out, 0);
  put_u16(out, static_cast<std::uint16_t>(cd.size()));
  put_u16(out, static_cast<std::uint16_t>(cd.size()));
  put_u32(out, cd_size);
  put_u32(out, cd_start);
  put_u16(out, 0);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("npz: cannot write '" + path + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("npz: short write to '" + path + "'");
}

// ---------------------------------------------------------------------------
// npy encode/decode
// ---------------------------------------------------------------------------

std::size_t dtype_size(const std::string& dtype) {
  if (dtype.size() != 3) throw DataError("npy: bad dtype '" + dtype + "'");
  switch (dtype[2]) {
    case '1': return 1;
    case '2': return 2;
    case '4': return 4;
    case '8': return 8;
    default: throw DataError("npy: bad dtype '" + dtype + "'");
  }
}

template <typename T>
double load_scalar(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return static_cast<double>(v);
}

double decode_element(const std::string& dtype, const char* p) {
  if (dtype == "|u1") return load_scalar<std::uint8_t>(p);
  if (dtype == "|i1") return load_scalar<std::int8_t>(p);
  if (dtype == "|b1") return load_scalar<std::uint8_t>(p);
  if (dtype == "<u2") return load_scalar<std::uint16_t>(p);
  if (dtype == "<i2") return load_scalar<std::int16_t>(p);
  if (dtype == "<u4") return load_scalar<std::uint32_t>(p);
  if (dtype == "<i4") return load_scalar<std::int32_t>(p);
  if (dtype == "<u8") return load_scalar<std::uint64_t>(p);
  if (dtype == "<i8") return load_scalar<std::int64_t>(p);
  if (dtype == "<f4") return load_scalar<float>(p);
  if (dtype == "<f8") return load_scalar<double>(p);
  throw DataError("npy: unsupported dtype '" + dtype + "'");
}

template <typename T>
void store_scalar(std::string& out, double v) {
  T t = static_cast<T>(v);
  char buf[sizeof(T)];
  std::memcpy(buf, &t, sizeof(T));
  out.append(buf, sizeof(T));
}

void encode_element(const std::string& dtype, double v, std::string& out) {
  if (dtype == "|u1") return store_scalar<std::uint8_t>(out, v);
  if (dtype == "|i1") return store_scalar<std::int8_t>(out, v);
  if (dtype == "<i4") return store_scalar<std::int32_t>(out, v);
  if (dtype == "<i8") return store_scalar<std::int64_t>(out, v);
  if (dtype == "<f4") return store_scalar<float>(out, v);
  if (dtype == "<f8") return store_scalar<double>(out, v);
  throw DataError("npy: unsupported write dtype '" + dtype + "'");
}

Array decode_npy(const std::string& name, const std::string& bytes) {
  if (bytes.size() < 10 || bytes.compare(0, 6, "\x93NUMPY") != 0) {
    throw DataError("npy: '" + name + "' is not an npy array");
  }
  const unsigned major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len;
  std::size_t header_off;
  if (major == 1) {
    header_len = get_u16(bytes, 8);
    header_off = 10;
  } else if (major == 2 || major == 3) {
    header_len = get_u32(bytes, 8);
    header_off = 12;
  } else {
    throw DataError("npy: unsupported version in '" + name + "'");
  }
  const std::string header = bytes.substr(header_off, header_len);

  auto find_value = [&](const std::string& key) -> std::string {
    const std::size_t kpos = header.find("'" + key + "'");
    if (kpos == std::string::npos) {
      throw DataError("npy: header of '" + name + "' missing key " + key);
    }
    std::size_t colon = header.find(':', kpos);
    return header.substr(colon + 1);
  };

  // descr
  std::string descr_rest = find_value("descr");
  const std::size_t q0 = descr_rest.find('\'');
  const std::size_t q1 = descr_rest.find('\'', q0 + 1);
  const std::string dtype = descr_rest.substr(q0 + 1, q1 - q0 - 1);

  // fortran_order
  const std::string fort = find_value("fortran_order");
  if (fort.find("True") != std::string::npos) {
    throw DataError("npy: fortran_order arrays unsupported ('" + name + "')");
  }

  // shape tuple
  std::string shape_rest = find_value("shape");
  const std::size_t p0 = shape_rest.find('(');
  const std::size_t p1 = shape_rest.find(')', p0);
  std::string tuple = shape_rest.substr(p0 + 1, p1 - p0 - 1);
  std::vector<std::size_t> shape;
  std::stringstream ts(tuple);
  std::string tok;
  while (std::getline(ts, tok, ',')) {
    std::string trimmed;
    for (char c : tok) {
      if (!std::isspace(static_cast<unsigned char>(c))) trimmed += c;
    }
    if (!trimmed.empty()) shape.push_back(std::stoull(trimmed));
  }
  if (shape.empty()) shape.push_back(1);  // 0-d arrays load as {1}

  std::size_t count = 1;
  for (std::size_t d : shape) count *= d;
  const std::size_t esize = dtype_size(dtype);
  const std::size_t data_off = header_off + header_len;
  if (bytes.size() - data_off < count * esize) {
    throw DataError("npy: truncated data in '" + name + "'");
  }

  Array a;
  a.shape = std::move(shape);
  a.source_dtype = dtype;
  a.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    a.values[i] = decode_element(dtype, bytes.data() + data_off + i * esize);
  }
  return a;
}

std::string encode_npy(const Array& a) {
  std::ostringstream hs;
  hs << "{'descr': '" << a.source_dtype << "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < a.shape.size(); ++i) {
    hs << a.shape[i];
    if (a.shape.size() == 1 || i + 1 < a.shape.size()) hs << ",";
    if (i + 1 < a.shape.size()) hs << " ";
  }
  hs << "), }";
  std::string header = hs.str();
  const std::size_t base = 10 + header.size() + 1;  // magic+len + '\n'
  const std::size_t pad = (64 - base % 64) % 64;
  header.append(pad, ' ');
  header.push_back('\n');

  std::string out("\x93NUMPY\x01\x00", 8);
  put_u16(out, static_cast<std::uint16_t>(header.size()));
  out += header;
  for (double v : a.values) encode_element(a.source_dtype, v, out);
  return out;
}

}  // namespace

Array from_tensor(const Tensor& t, std::string dtype) {
  Array a;
  a.shape = t.shape();
  a.values.assign(t.data(), t.data() + t.size());
  a.source_dtype = std::move(dtype);
  return a;
}

Tensor to_tensor(const Array& a) {
  return Tensor(a.shape, a.values);
}

Contents load(const std::string& path) {
  Contents c;
  for (ZipEntry& e : read_zip(path)) {
    if (e.name.size() > 4 && e.name.compare(e.name.size() - 4, 4, ".npy") == 0) {
      const std::string key = e.name.substr(0, e.name.size() - 4);
      c.arrays.emplace(key, decode_npy(e.name, e.bytes));
    } else {
      c.extras.emplace(e.name, std::move(e.bytes));
    }
  }
  return c;
}

void save(const std::string& path,
          const std::vector<std::pair<std::string, Array>>& arrays,
          const std::vector<std::pair<std::string, std::string>>& extras) {
  std::vector<ZipEntry> entries;
  entries.reserve(arrays.size() + extras.size());
  for (const auto& [name, arr] : arrays) {
    entries.push_back({name + ".npy", encode_npy(arr)});
  }
  for (const auto& [name, bytes] : extras) {
    entries.push_back({name, bytes});
  }
  write_zip(path, entries);
}

}  // namespace brsda::npz
