#include "stmbr/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "stmbr/image_io.hpp"
#include "stmbr/nifti.hpp"
#include "stmbr/rng.hpp"

namespace fs = std::filesystem;

namespace stmbr {

namespace {

// Largest-remainder apportionment of `total` across class populations.
std::map<int, int> apportion(const std::map<int, int>& class_counts, int total, int grand_total) {
  std::map<int, int> quota;
  std::vector<std::pair<double, int>> remainders;  // (-fraction, class) for stable ordering
  int assigned = 0;
  for (const auto& [cls, n] : class_counts) {
    const double exact = static_cast<double>(total) * n / grand_total;
    int q = static_cast<int>(exact);
    q = std::min(q, n);
    quota[cls] = q;
    assigned += q;
    remainders.push_back({-(exact - q), cls});
  }
  std::sort(remainders.begin(), remainders.end());
  for (const auto& [negfrac, cls] : remainders) {
    if (assigned >= total) break;
    if (quota[cls] < class_counts.at(cls)) {
      ++quota[cls];
      ++assigned;
    }
  }
  return quota;
}

std::string csv_field(std::istringstream& line) {
  std::string field;
  if (!std::getline(line, field, ',')) return {};
  while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
  while (!field.empty() && field.front() == ' ') field.erase(field.begin());
  return field;
}

SampleSet load_pgm_layout(const fs::path& dir) {
  std::ifstream labels(dir / "labels.csv");
  std::string line;
  if (!std::getline(labels, line)) throw std::runtime_error("labels.csv: empty file");
  {
    std::istringstream hdr(line);
    if (csv_field(hdr) != "id" || csv_field(hdr) != "label")
      throw std::runtime_error("labels.csv: header row 'id,label' required");
  }
  SampleSet set;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    Sample s;
    s.id = csv_field(row);
    const std::string lbl = csv_field(row);
    if (s.id.empty() || lbl.empty()) throw std::runtime_error("labels.csv: malformed row: " + line);
    s.label = std::stoi(lbl);
    s.image = read_pgm((dir / "images" / (s.id + ".pgm")).string());
    const fs::path mask_path = dir / "masks" / (s.id + ".pgm");
    if (fs::exists(mask_path)) {
      Tensor<uint8_t> raw;
      read_pgm(mask_path.string(), &raw);
      for (auto& v : raw.data) v = v >= 128 ? 1 : 0;
      s.mask = std::move(raw);
    }
    if (set.samples.empty()) {
      set.height = s.image.shape[1];
      set.width = s.image.shape[2];
    } else if (s.image.shape[1] != set.height || s.image.shape[2] != set.width) {
      throw std::runtime_error("dataset: mixed image sizes (sample " + s.id + ")");
    }
    set.samples.push_back(std::move(s));
  }
  if (set.samples.empty()) throw std::runtime_error("labels.csv: no samples listed");
  return set;
}

SampleSet load_nifti_layout(const fs::path& dir) {
  std::ifstream manifest(dir / "slices.csv");
  std::string line;
  if (!std::getline(manifest, line)) throw std::runtime_error("slices.csv: empty file");
  {
    std::istringstream hdr(line);
    if (csv_field(hdr) != "id" || csv_field(hdr) != "volume" || csv_field(hdr) != "slice" ||
        csv_field(hdr) != "label")
      throw std::runtime_error("slices.csv: header row 'id,volume,slice,label' required");
  }
  std::map<std::string, Tensor<float>> volumes;
  SampleSet set;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    Sample s;
    s.id = csv_field(row);
    const std::string volname = csv_field(row);
    const std::string slice_s = csv_field(row);
    const std::string lbl = csv_field(row);
    if (s.id.empty() || volname.empty() || slice_s.empty() || lbl.empty())
      throw std::runtime_error("slices.csv: malformed row: " + line);
    s.label = std::stoi(lbl);
    const int slice = std::stoi(slice_s);
    auto it = volumes.find(volname);
    if (it == volumes.end())
      it = volumes.emplace(volname, read_nifti((dir / volname).string()).second).first;
    const Tensor<float>& vol = it->second;
    if (slice < 0 || slice >= vol.shape[0])
      throw std::runtime_error("slices.csv: slice index out of range for " + volname);
    const int h = vol.shape[2], w = vol.shape[3];
    Tensor<float> img({1, h, w});
    std::copy_n(vol.data.data() + static_cast<int64_t>(slice) * h * w,
                static_cast<int64_t>(h) * w, img.data.data());
    s.image = std::move(img);
    if (set.samples.empty()) {
      set.height = h;
      set.width = w;
    } else if (h != set.height || w != set.width) {
      throw std::runtime_error("dataset: mixed slice sizes");
    }
    set.samples.push_back(std::move(s));
  }
  if (set.samples.empty()) throw std::runtime_error("slices.csv: no slices listed");
  return set;
}

}  // namespace

Splits split_dataset(const SampleSet& all, double test_ratio, double val_ratio, uint64_t seed) {
  if (test_ratio <= 0 || test_ratio >= 1 || val_ratio < 0 || val_ratio >= 1 ||
      test_ratio + val_ratio >= 1)
    throw std::invalid_argument("split_dataset: ratios must lie in (0,1) with train remainder");
  const int n = static_cast<int>(all.size());
  if (n == 0) throw std::invalid_argument("split_dataset: empty sample set");

  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < n; ++i) by_class[all.samples[static_cast<size_t>(i)].label].push_back(i);

  Rng rng = Rng::stream(seed, "split");
  for (auto& [cls, idx] : by_class) rng.shuffle(idx.begin(), idx.end());

  std::map<int, int> counts;
  for (const auto& [cls, idx] : by_class) counts[cls] = static_cast<int>(idx.size());

  // Train pool keeps the floor; the fractional remainder goes to test.
  const int test_total = n - static_cast<int>(static_cast<double>(n) * (1.0 - test_ratio));
  const auto test_quota = apportion(counts, test_total, n);

  std::vector<int> test_idx, pool_idx;
  std::map<int, std::vector<int>> pool_by_class;
  for (auto& [cls, idx] : by_class) {
    const int q = test_quota.at(cls);
    test_idx.insert(test_idx.end(), idx.begin(), idx.begin() + q);
    pool_by_class[cls].assign(idx.begin() + q, idx.end());
  }

  std::map<int, int> pool_counts;
  int pool_n = 0;
  for (const auto& [cls, idx] : pool_by_class) {
    pool_counts[cls] = static_cast<int>(idx.size());
    pool_n += pool_counts[cls];
  }
  const int val_total =
      val_ratio > 0 ? pool_n - static_cast<int>(static_cast<double>(pool_n) * (1.0 - val_ratio)) : 0;
  const auto val_quota = apportion(pool_counts, val_total, std::max(pool_n, 1));

  std::vector<int> val_idx, train_idx;
  for (auto& [cls, idx] : pool_by_class) {
    const int q = val_quota.at(cls);
    val_idx.insert(val_idx.end(), idx.begin(), idx.begin() + q);
    train_idx.insert(train_idx.end(), idx.begin() + q, idx.end());
    if (idx.size() == static_cast<size_t>(q))
      throw std::invalid_argument("split_dataset: class " + std::to_string(cls) +
                                  " has fewer samples than the splits require");
  }

  auto build = [&](std::vector<int>& idx) {
    std::sort(idx.begin(), idx.end());
    SampleSet s;
    s.height = all.height;
    s.width = all.width;
    s.samples.reserve(idx.size());
    for (int i : idx) s.samples.push_back(all.samples[static_cast<size_t>(i)]);
    return s;
  };
  Splits out;
  out.test = build(test_idx);
  out.val = build(val_idx);
  out.train = build(train_idx);
  return out;
}

void save_dataset(const SampleSet& set, const std::string& dir) {
  const fs::path root(dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  std::ofstream labels(root / "labels.csv");
  if (!labels) throw std::runtime_error("cannot write labels.csv in " + dir);
  labels << "id,label\n";
  for (const auto& s : set.samples) {
    labels << s.id << "," << s.label << "\n";
    write_image_pgm(s.image, (root / "images" / (s.id + ".pgm")).string());
    Tensor<uint8_t> mask = s.mask;
    if (mask.empty()) mask = Tensor<uint8_t>::zeros({set.height, set.width});
    write_mask_pgm(mask, (root / "masks" / (s.id + ".pgm")).string());
  }
  if (!labels) throw std::runtime_error("write failure: labels.csv");
}

SampleSet load_dataset(const std::string& dir) {
  const fs::path root(dir);
  if (fs::exists(root / "labels.csv")) return load_pgm_layout(root);
  if (fs::exists(root / "slices.csv")) return load_nifti_layout(root);
  throw std::runtime_error("dataset: neither labels.csv nor slices.csv found in " + dir);
}

}  // namespace stmbr
