#include "oar/voxelio/dicom.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <stdexcept>

#include "oar/common/io.hpp"

namespace oar::voxelio::dicom {

namespace {

constexpr std::uint32_t kItem = tag(0xFFFE, 0xE000);
constexpr std::uint32_t kItemDelim = tag(0xFFFE, 0xE00D);
constexpr std::uint32_t kSeqDelim = tag(0xFFFE, 0xE0DD);
constexpr std::uint32_t kUndefined = 0xFFFFFFFFu;

bool is_long_vr(const std::string& vr) {
  return vr == "OB" || vr == "OW" || vr == "OF" || vr == "SQ" || vr == "UT" || vr == "UN";
}

// Tags that are sequences, needed to parse defined-length SQ under implicit VR.
bool is_known_sq(std::uint32_t t) {
  switch (t) {
    case tag(0x3006, 0x0010):  // ReferencedFrameOfReferenceSequence
    case tag(0x3006, 0x0012):
    case tag(0x3006, 0x0014):
    case tag(0x3006, 0x0016):
    case tag(0x3006, 0x0020):  // StructureSetROISequence
    case tag(0x3006, 0x0039):  // ROIContourSequence
    case tag(0x3006, 0x0040):  // ContourSequence
    case tag(0x3006, 0x0080):  // RTROIObservationsSequence
    case tag(0x3006, 0x0086):
    case tag(0x0008, 0x1115):
    case tag(0x0008, 0x1140):
      return true;
    default:
      return false;
  }
}

class Cursor {
 public:
  Cursor(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::size_t pos() const { return pos_; }
  std::size_t size() const { return size_; }
  bool at_end() const { return pos_ >= size_; }
  void seek(std::size_t p) { pos_ = p; }

  std::uint16_t u16() {
    need(2);
    std::uint16_t v;
    std::memcpy(&v, data_ + pos_, 2);
    pos_ += 2;
    return v;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, data_ + pos_, 4);
    pos_ += 4;
    return v;
  }

  std::vector<std::uint8_t> bytes(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> v(data_ + pos_, data_ + pos_ + n);
    pos_ += n;
    return v;
  }

  std::string ascii(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > size_) throw std::runtime_error("dicom: truncated file");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

void parse_dataset(Cursor& cur, std::size_t end, bool explicit_vr, Dataset& out);

// Parses one sequence body (after tag+length header) into items.
void parse_sequence(Cursor& cur, std::uint32_t length, bool explicit_vr, Element& elem) {
  std::size_t end = length == kUndefined ? cur.size() : cur.pos() + length;
  while (cur.pos() < end) {
    std::uint16_t group = cur.u16();
    std::uint16_t el = cur.u16();
    std::uint32_t t = tag(group, el);
    std::uint32_t item_len = cur.u32();
    if (t == kSeqDelim) return;
    if (t != kItem) throw std::runtime_error("dicom: expected sequence item");
    Dataset item;
    if (item_len == kUndefined) {
      parse_dataset(cur, cur.size(), explicit_vr, item);  // stops at item delimiter
    } else {
      std::size_t item_end = cur.pos() + item_len;
      parse_dataset(cur, item_end, explicit_vr, item);
      cur.seek(item_end);
    }
    elem.items.push_back(std::move(item));
  }
}

// Parses elements until `end` or an item delimiter (returned to caller).
void parse_dataset(Cursor& cur, std::size_t end, bool explicit_vr, Dataset& out) {
  while (cur.pos() + 8 <= end && cur.pos() + 8 <= cur.size()) {
    std::uint16_t group = cur.u16();
    std::uint16_t el = cur.u16();
    std::uint32_t t = tag(group, el);
    if (t == kItemDelim || t == kSeqDelim) {
      cur.u32();  // length, always zero
      return;
    }

    Element elem;
    std::uint32_t length;
    if (explicit_vr) {
      elem.vr = cur.ascii(2);
      if (is_long_vr(elem.vr)) {
        cur.u16();  // reserved
        length = cur.u32();
      } else {
        length = cur.u16();
      }
    } else {
      length = cur.u32();
      elem.vr = is_known_sq(t) || length == kUndefined ? "SQ" : "UN";
    }

    if (elem.vr == "SQ") {
      parse_sequence(cur, length, explicit_vr, elem);
    } else if (length == kUndefined) {
      throw std::runtime_error("dicom: undefined-length non-sequence element unsupported");
    } else {
      elem.value = cur.bytes(length);
    }
    out.elements[t] = std::move(elem);
  }
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \0", 0, 2);
  std::size_t b = s.find_last_not_of(" \0", std::string::npos, 2);
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_multi(const std::string& s) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    std::size_t p = s.find('\\', start);
    if (p == std::string::npos) {
      parts.push_back(trim(s.substr(start)));
      break;
    }
    parts.push_back(trim(s.substr(start, p - start)));
    start = p + 1;
  }
  return parts;
}

}  // namespace

bool Dataset::has(std::uint16_t group, std::uint16_t elem) const {
  return elements.count(tag(group, elem)) > 0;
}

const Element& Dataset::get(std::uint16_t group, std::uint16_t elem) const {
  auto it = elements.find(tag(group, elem));
  if (it == elements.end()) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "(%04x,%04x)", group, elem);
    throw std::runtime_error(std::string("dicom: missing element ") + buf);
  }
  return it->second;
}

std::string Dataset::str(std::uint16_t group, std::uint16_t elem) const {
  const Element& e = get(group, elem);
  return trim(std::string(e.value.begin(), e.value.end()));
}

std::vector<double> Dataset::nums(std::uint16_t group, std::uint16_t elem) const {
  std::vector<double> out;
  for (const auto& part : split_multi(str(group, elem)))
    if (!part.empty()) out.push_back(std::stod(part));
  return out;
}

double Dataset::num(std::uint16_t group, std::uint16_t elem) const {
  auto v = nums(group, elem);
  if (v.empty()) throw std::runtime_error("dicom: empty numeric element");
  return v[0];
}

int Dataset::intval(std::uint16_t group, std::uint16_t elem) const {
  return static_cast<int>(std::llround(num(group, elem)));
}

std::uint16_t Dataset::u16(std::uint16_t group, std::uint16_t elem) const {
  const Element& e = get(group, elem);
  if (e.value.size() < 2) throw std::runtime_error("dicom: short US element");
  std::uint16_t v;
  std::memcpy(&v, e.value.data(), 2);
  return v;
}

Dataset parse_file(const std::filesystem::path& path) {
  auto bytes = read_binary_file(path);
  if (bytes.size() < 132 || std::memcmp(bytes.data() + 128, "DICM", 4) != 0)
    throw std::runtime_error("dicom: missing DICM magic in " + path.string());
  Cursor cur(bytes.data(), bytes.size());
  cur.seek(132);

  // File meta group: always explicit VR little endian.
  Dataset meta;
  while (!cur.at_end()) {
    std::size_t mark = cur.pos();
    std::uint16_t group = cur.u16();
    cur.seek(mark);
    if (group != 0x0002) break;
    // Parse exactly one element into meta.
    std::size_t one_end = cur.size();
    Dataset tmp;
    // Reuse parse_dataset for a single element by bounding to just past it:
    // simplest is to parse manually here.
    cur.u16();
    std::uint16_t el = cur.u16();
    Element elem;
    elem.vr = cur.ascii(2);
    std::uint32_t length;
    if (is_long_vr(elem.vr)) {
      cur.u16();
      length = cur.u32();
    } else {
      length = cur.u16();
    }
    (void)one_end;
    elem.value = cur.bytes(length);
    meta.elements[tag(0x0002, el)] = std::move(elem);
  }

  std::string ts = meta.has(0x0002, 0x0010) ? meta.str(0x0002, 0x0010) : "1.2.840.10008.1.2.1";
  bool explicit_vr;
  if (ts == "1.2.840.10008.1.2.1")
    explicit_vr = true;
  else if (ts == "1.2.840.10008.1.2")
    explicit_vr = false;
  else
    throw std::runtime_error("dicom: unsupported transfer syntax " + ts + " in " + path.string());

  Dataset data;
  parse_dataset(cur, cur.size(), explicit_vr, data);
  return data;
}

LoadedSeries load_dicom_series(const std::vector<std::filesystem::path>& slice_files) {
  if (slice_files.empty()) throw std::invalid_argument("load_dicom_series: no files");

  struct SliceData {
    double z;
    double x0, y0;
    std::vector<double> pixels;
  };

  std::vector<SliceData> slices;
  int rows = 0, cols = 0;
  double dy = 1.0, dx = 1.0;
  std::string patient_id;

  for (const auto& path : slice_files) {
    Dataset d = parse_file(path);
    int r = d.u16(0x0028, 0x0010);
    int c = d.u16(0x0028, 0x0011);
    if (rows == 0) {
      rows = r;
      cols = c;
      auto ps = d.nums(0x0028, 0x0030);  // row spacing \ col spacing
      if (ps.size() == 2) {
        dy = ps[0];
        dx = ps[1];
      }
      if (d.has(0x0010, 0x0020)) patient_id = d.str(0x0010, 0x0020);
    } else if (r != rows || c != cols) {
      throw std::runtime_error("load_dicom_series: inconsistent slice dimensions");
    }

    auto ipp = d.nums(0x0020, 0x0032);
    if (ipp.size() != 3)
      throw std::runtime_error("load_dicom_series: missing ImagePositionPatient in " +
                               path.string());
    double slope = d.has(0x0028, 0x1053) ? d.num(0x0028, 0x1053) : 1.0;
    double intercept = d.has(0x0028, 0x1052) ? d.num(0x0028, 0x1052) : 0.0;
    bool signed_px = d.has(0x0028, 0x0103) && d.u16(0x0028, 0x0103) == 1;

    const Element& pd = d.get(0x7FE0, 0x0010);
    std::size_t expect = static_cast<std::size_t>(r) * c * 2;
    if (pd.value.size() < expect)
      throw std::runtime_error("load_dicom_series: short pixel data in " + path.string());

    SliceData s;
    s.z = ipp[2];
    s.x0 = ipp[0];
    s.y0 = ipp[1];
    s.pixels.resize(static_cast<std::size_t>(r) * c);
    for (std::size_t i = 0; i < s.pixels.size(); ++i) {
      std::uint16_t raw;
      std::memcpy(&raw, pd.value.data() + 2 * i, 2);
      double v = signed_px ? static_cast<double>(static_cast<std::int16_t>(raw))
                           : static_cast<double>(raw);
      s.pixels[i] = v * slope + intercept;
    }
    slices.push_back(std::move(s));
  }

  std::sort(slices.begin(), slices.end(),
            [](const SliceData& a, const SliceData& b) { return a.z < b.z; });

  double dz = 1.0;
  if (slices.size() > 1) dz = slices[1].z - slices[0].z;
  if (dz <= 0.0) dz = 1.0;

  LoadedSeries out;
  out.volume = VolumeScan(static_cast<int>(slices.size()), rows, cols, Modality::CT);
  out.volume.set_case_id(patient_id);
  out.volume.set_spacing(dz, dy, dx);
  out.geometry.origin_x = slices[0].x0;
  out.geometry.origin_y = slices[0].y0;
  out.geometry.dz = dz;
  out.geometry.dy = dy;
  out.geometry.dx = dx;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    out.geometry.slice_z.push_back(slices[i].z);
    std::copy(slices[i].pixels.begin(), slices[i].pixels.end(),
              out.volume.voxels().begin() +
                  static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(rows) * cols));
  }
  return out;
}

RawStructureSet load_dicom_rtstruct(const std::filesystem::path& path) {
  Dataset d = parse_file(path);
  RawStructureSet set;

  std::map<int, std::string> roi_names;
  if (d.has(0x3006, 0x0020)) {
    for (const auto& item : d.get(0x3006, 0x0020).items)
      roi_names[item.intval(0x3006, 0x0022)] = item.str(0x3006, 0x0026);
  }

  if (!d.has(0x3006, 0x0039)) return set;
  for (const auto& roi : d.get(0x3006, 0x0039).items) {
    RawStructure structure;
    int roi_number = roi.has(0x3006, 0x0084) ? roi.intval(0x3006, 0x0084) : -1;
    auto name_it = roi_names.find(roi_number);
    structure.name =
        name_it != roi_names.end() ? name_it->second : "ROI_" + std::to_string(roi_number);
    if (roi.has(0x3006, 0x0040)) {
      for (const auto& contour : roi.get(0x3006, 0x0040).items) {
        auto data = contour.nums(0x3006, 0x0050);
        if (data.size() < 9 || data.size() % 3 != 0) continue;  // degenerate
        RawContour rc;
        rc.has_z = true;
        rc.z = data[2];
        for (std::size_t i = 0; i < data.size(); i += 3) rc.points.push_back({data[i], data[i + 1]});
        structure.contours.push_back(std::move(rc));
      }
    }
    set.structures.push_back(std::move(structure));
  }
  return set;
}

void resolve_against_series(RawStructureSet& set, const SeriesGeometry& geom) {
  for (auto& structure : set.structures) {
    int idx = 0;
    for (auto& contour : structure.contours) {
      if (!contour.has_z) continue;
      int best = -1;
      double best_d = 1e300;
      for (std::size_t i = 0; i < geom.slice_z.size(); ++i) {
        double d = std::abs(geom.slice_z[i] - contour.z);
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(i);
        }
      }
      if (best < 0 || best_d > geom.dz * 0.5 + 1e-6)
        throw std::runtime_error("rtstruct contour " + structure.name + "[" +
                                 std::to_string(idx) + "] at z=" + std::to_string(contour.z) +
                                 " matches no slice of the series");
      contour.slice_index = best;
      contour.has_z = false;
      for (auto& p : contour.points) {
        p.x = (p.x - geom.origin_x) / geom.dx;
        p.y = (p.y - geom.origin_y) / geom.dy;
      }
      ++idx;
    }
  }
}

DicomCase load_dicom_case(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> ct_files;
  std::filesystem::path rtstruct_file;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    Dataset d;
    try {
      d = parse_file(entry.path());
    } catch (const std::exception&) {
      continue;  // not a DICOM file
    }
    std::string modality = d.has(0x0008, 0x0060) ? d.str(0x0008, 0x0060) : "";
    if (modality == "CT")
      ct_files.push_back(entry.path());
    else if (modality == "RTSTRUCT")
      rtstruct_file = entry.path();
  }
  if (ct_files.empty()) throw std::runtime_error("load_dicom_case: no CT slices in " + dir.string());

  DicomCase out;
  out.series = load_dicom_series(ct_files);
  if (!rtstruct_file.empty()) {
    out.structures = load_dicom_rtstruct(rtstruct_file);
    resolve_against_series(out.structures, out.series.geometry);
  }
  return out;
}

}  // namespace oar::voxelio::dicom
