#include "ipens/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ipens/rng.hpp"

namespace ipens::data {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- manifest

fs::path DatasetManifest::resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
}

int DatasetManifest::label_index(const std::string& label) const {
    const auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end()) throw DataError("label '" + label + "' is not in the vocabulary");
    return static_cast<int>(it - labels.begin());
}

std::vector<int> DatasetManifest::label_indices() const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(label_index(s.label));
    return out;
}

DatasetManifest DatasetManifest::subset(const std::string& split) const {
    DatasetManifest out;
    out.labels = labels;
    out.provenance = provenance;
    out.base_dir = base_dir;
    for (const auto& s : samples)
        if (s.split == split) out.samples.push_back(s);
    return out;
}

bool DatasetManifest::has_splits() const {
    return !samples.empty() &&
           std::all_of(samples.begin(), samples.end(), [](const Sample& s) { return !s.split.empty(); });
}

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, sep)) out.push_back(trim(field));
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

std::string at_line(std::size_t n) { return "manifest line " + std::to_string(n) + ": "; }

}  // namespace

DatasetManifest parse_manifest(const std::string& text, const fs::path& base_dir) {
    DatasetManifest m;
    m.base_dir = base_dir;
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    std::map<std::string, std::size_t> columns;
    bool declared_labels = false;
    std::map<std::string, std::size_t> seen_paths;
    static const std::set<std::string> kSplits{"", "train", "val", "test"};

    while (std::getline(in, raw)) {
        ++line_no;
        const auto line = trim(raw);
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto body = trim(line.substr(1));
            if (body.rfind("labels:", 0) == 0) {
                m.labels = split_fields(trim(body.substr(7)));
                if (m.labels.empty() || std::any_of(m.labels.begin(), m.labels.end(), [](auto& l) { return l.empty(); }))
                    throw DataError(at_line(line_no) + "empty label in vocabulary declaration");
                declared_labels = true;
            } else if (body.rfind("provenance:", 0) == 0) {
                m.provenance = trim(body.substr(11));
            }
            continue;
        }
        const auto fields = split_fields(line);
        if (columns.empty()) {
            for (std::size_t i = 0; i < fields.size(); ++i) columns[fields[i]] = i;
            for (const char* required : {"path", "label", "patient_id"})
                if (!columns.contains(required))
                    throw DataError(at_line(line_no) + "header lacks required column '" + required + "'");
            continue;
        }
        auto field = [&](const char* name) -> std::string {
            const auto it = columns.find(name);
            if (it == columns.end() || it->second >= fields.size()) return {};
            return fields[it->second];
        };
        if (fields.size() > columns.size())
            throw DataError(at_line(line_no) + "expected at most " + std::to_string(columns.size()) + " fields, got " +
                            std::to_string(fields.size()));
        Sample s;
        s.line = line_no;
        s.path = field("path");
        s.label = field("label");
        s.patient_id = field("patient_id");
        s.split = field("split");
        s.mask = field("mask");
        if (s.path.empty()) throw DataError(at_line(line_no) + "missing path");
        if (s.label.empty()) throw DataError(at_line(line_no) + "missing label");
        if (s.patient_id.empty()) throw DataError(at_line(line_no) + "missing patient_id");
        if (!kSplits.contains(s.split))
            throw DataError(at_line(line_no) + "unknown split '" + s.split + "' (expected train|val|test)");
        if (declared_labels && std::find(m.labels.begin(), m.labels.end(), s.label) == m.labels.end())
            throw DataError(at_line(line_no) + "unknown label '" + s.label + "'");
        if (const auto it = seen_paths.find(s.path); it != seen_paths.end())
            throw DataError("duplicate path '" + s.path + "' on manifest lines " + std::to_string(it->second) +
                            " and " + std::to_string(line_no));
        seen_paths.emplace(s.path, line_no);
        m.samples.push_back(std::move(s));
    }
    if (columns.empty()) throw DataError("manifest has no header line");
    if (!declared_labels) {
        std::set<std::string> seen;
        for (const auto& s : m.samples) seen.insert(s.label);
        m.labels.assign(seen.begin(), seen.end());
    }
    return m;
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    auto m = parse_manifest(ss.str(), path.parent_path());
    return m;
}

std::string format_manifest(const DatasetManifest& manifest) {
    std::ostringstream os;
    os << "# labels: ";
    for (std::size_t i = 0; i < manifest.labels.size(); ++i) os << (i ? "," : "") << manifest.labels[i];
    os << '\n';
    if (!manifest.provenance.empty()) os << "# provenance: " << manifest.provenance << '\n';
    os << "path,label,patient_id,split,mask\n";
    for (const auto& s : manifest.samples)
        os << s.path << ',' << s.label << ',' << s.patient_id << ',' << s.split << ',' << s.mask << '\n';
    return os.str();
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
    const auto dir = path.parent_path().empty() ? fs::path(".") : path.parent_path();
    auto rebased = manifest;
    auto relative = [&](const std::string& p) {
        if (p.empty()) return p;
        const auto abs = fs::absolute(manifest.resolve(p)).lexically_normal();
        return abs.lexically_relative(fs::absolute(dir).lexically_normal()).generic_string();
    };
    for (auto& s : rebased.samples) {
        s.path = relative(s.path);
        s.mask = relative(s.mask);
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest " + path.string());
    out << format_manifest(rebased);
}

// ------------------------------------------------------------------ images

namespace {

// Next whitespace-separated header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
    std::string tok;
    char c;
    while (in.get(c)) {
        if (c == '#') {
            std::string rest;
            std::getline(in, rest);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(c);
    }
    return tok;
}

}  // namespace

GrayImage read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image " + path.string());
    const auto magic = pnm_token(in);
    if (magic != "P5") throw DataError(path.string() + ": not a binary PGM (magic '" + magic + "')");
    std::size_t w = 0, h = 0;
    int maxval = 0;
    try {
        w = std::stoul(pnm_token(in));
        h = std::stoul(pnm_token(in));
        maxval = std::stoi(pnm_token(in));
    } catch (const std::exception&) {
        throw DataError(path.string() + ": malformed PGM header");
    }
    if (w == 0 || h == 0 || maxval <= 0 || maxval > 65535) throw DataError(path.string() + ": invalid PGM header");
    const std::size_t bpp = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(w * h * bpp);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw DataError(path.string() + ": truncated pixel data");
    GrayImage img{Tensor({h, w, 1}), maxval};
    for (std::size_t i = 0; i < w * h; ++i)
        img.pixels[i] = bpp == 1 ? raw[i] : static_cast<float>((raw[2 * i] << 8) | raw[2 * i + 1]);
    return img;
}

namespace {

unsigned char to_byte(double v) { return static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

void write_pgm(const fs::path& path, const Tensor& image) {
    if (image.rank() < 2 || (image.rank() == 3 && image.dim(2) != 1))
        throw DimensionError("channels", "PGM output needs an H×W or H×W×1 image");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write image " + path.string());
    out << "P5\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
    for (float v : image.data()) out.put(static_cast<char>(to_byte(v)));
}

void write_ppm(const fs::path& path, const Tensor& rgb) {
    if (rgb.rank() != 3 || rgb.dim(2) != 3) throw DimensionError("channels", "PPM output needs an H×W×3 image");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write image " + path.string());
    out << "P6\n" << rgb.dim(1) << ' ' << rgb.dim(0) << "\n255\n";
    for (float v : rgb.data()) out.put(static_cast<char>(to_byte(255.0 * v)));
}

// ----------------------------------------------------------- preprocessing

namespace {

void require_single_channel(const Tensor& t, const char* what) {
    if (t.rank() != 3 || t.dim(2) != 1)
        throw DimensionError("channels", std::string(what) + " must be H×W×1, got " + shape_string(t.shape()));
}

}  // namespace

Tensor crop_to_mask(const Tensor& image, const Tensor& mask) {
    require_single_channel(image, "image");
    require_single_channel(mask, "mask");
    if (mask.dim(0) != image.dim(0)) throw DimensionError("height", "mask and image heights differ");
    if (mask.dim(1) != image.dim(1)) throw DimensionError("width", "mask and image widths differ");
    const auto h = image.dim(0), w = image.dim(1);
    std::size_t y0 = h, y1 = 0, x0 = w, x1 = 0;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            if (mask[y * w + x] != 0.0f) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
    if (y0 == h) throw DataError("mask has no nonzero pixels");
    if (y0 == 0 && x0 == 0 && y1 == h - 1 && x1 == w - 1) return image;
    const auto ch = y1 - y0 + 1, cw = x1 - x0 + 1;
    Tensor out({ch, cw, 1});
    for (std::size_t y = 0; y < ch; ++y)
        for (std::size_t x = 0; x < cw; ++x) out[y * cw + x] = image[(y + y0) * w + x + x0];
    return out;
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
    if (image.rank() != 3) throw DimensionError("rank", "resize needs an H×W×C image");
    const auto h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (h == height && w == width) return image;
    Tensor out({height, width, c});
    const double sy = static_cast<double>(h) / height, sx = static_cast<double>(w) / width;
    for (std::size_t y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const auto y1 = std::min(y0 + 1, h - 1);
        const double ty = fy - y0;
        for (std::size_t x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const auto x1 = std::min(x0 + 1, w - 1);
            const double tx = fx - x0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                auto at = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(image[(yy * w + xx) * c + ch]); };
                const double top = at(y0, x0) * (1 - tx) + at(y0, x1) * tx;
                const double bottom = at(y1, x0) * (1 - tx) + at(y1, x1) * tx;
                out[(y * width + x) * c + ch] = static_cast<float>(top * (1 - ty) + bottom * ty);
            }
        }
    }
    return out;
}

Tensor median_filter3x3(const Tensor& image) {
    require_single_channel(image, "image");
    const auto h = image.dim(0), w = image.dim(1);
    Tensor out(image.shape());
    std::array<float, 9> win;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            std::size_t k = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const auto yy = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(y) + dy, 0, h - 1));
                    const auto xx = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(x) + dx, 0, w - 1));
                    win[k++] = image[yy * w + xx];
                }
            std::nth_element(win.begin(), win.begin() + 4, win.end());
            out[y * w + x] = win[4];
        }
    return out;
}

PreprocessResult preprocess(const Tensor& image, const std::optional<Tensor>& mask, const PreprocessOptions& options) {
    require_single_channel(image, "image");
    if (options.target_height == 0 || options.target_width == 0) throw UsageError("target size must be positive");
    if (!(options.raw_max > 0.0)) throw UsageError("raw_max must be positive");
    Tensor x = mask ? crop_to_mask(image, *mask) : image;
    x = resize_bilinear(x, options.target_height, options.target_width);
    for (auto& v : x.data()) v = static_cast<float>(v / options.raw_max);
    x = median_filter3x3(x);
    double mean = 0.0;
    for (float v : x.data()) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (float v : x.data()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(x.size()));
    PreprocessResult r;
    r.constant_image = sd < 1e-8;
    const double scale = r.constant_image ? 1.0 : sd;
    for (auto& v : x.data()) v = static_cast<float>((v - mean) / scale);
    r.image = std::move(x);
    return r;
}

Dataset load_dataset(const DatasetManifest& manifest, const PreprocessOptions& options) {
    if (manifest.samples.empty()) throw DataError("manifest has no samples");
    Dataset d;
    d.vocabulary = manifest.labels;
    const auto n = manifest.samples.size();
    const auto px = options.target_height * options.target_width;
    d.images = Tensor({n, options.target_height, options.target_width, 1});
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = manifest.samples[i];
        const auto img = read_pgm(manifest.resolve(s.path));
        std::optional<Tensor> mask;
        if (!s.mask.empty()) mask = read_pgm(manifest.resolve(s.mask)).pixels;
        PreprocessOptions opt = options;
        opt.raw_max = img.max_value;
        auto r = preprocess(img.pixels, mask, opt);
        d.constant_images += r.constant_image ? 1 : 0;
        std::copy(r.image.data().begin(), r.image.data().end(), d.images.data().begin() + i * px);
        d.labels.push_back(manifest.label_index(s.label));
        d.ids.push_back(s.path);
    }
    return d;
}

// -------------------------------------------------------------- synthetic

std::vector<std::string> default_class_names(std::size_t classes) {
    if (classes == 2) return {"normal", "abnormal"};
    if (classes == 3) return {"normal", "bacterial", "covid"};
    std::vector<std::string> out;
    for (std::size_t c = 0; c < classes; ++c) out.push_back("class" + std::to_string(c));
    return out;
}

namespace {

struct PatientField {
    double base;
    std::array<double, 3> amp, fy, fx, phase;
};

}  // namespace

DatasetManifest synth_dataset(const SynthConfig& config, const fs::path& out_dir) {
    if (config.classes < 2) throw UsageError("synthetic data needs at least 2 classes");
    if (config.patients_per_class < 1 || config.samples_per_patient < 1)
        throw UsageError("patients_per_class and samples_per_patient must be >= 1");
    if (config.image_size < 16) throw UsageError("synthetic image size must be >= 16");
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    fs::create_directories(out_dir / "masks", ec);
    if (ec || !fs::is_directory(out_dir / "images"))
        throw DataError("cannot create output directory " + out_dir.string());

    DatasetManifest m;
    m.labels = default_class_names(config.classes);
    m.provenance = "synthetic seed=" + std::to_string(config.seed) + " size=" + std::to_string(config.image_size);
    m.base_dir = out_dir;
    const auto n = config.image_size;
    const double pi = M_PI;
    std::size_t patient_no = 0;
    for (std::size_t c = 0; c < config.classes; ++c)
        for (std::size_t p = 0; p < config.patients_per_class; ++p, ++patient_no) {
            Rng prng(derive_seed(config.seed, {1, patient_no}));
            PatientField field;
            field.base = prng.uniform(80, 110);
            for (int k = 0; k < 3; ++k) {
                field.amp[k] = prng.uniform(4, 12);
                field.fy[k] = prng.uniform(0.5, 2.0) / n;
                field.fx[k] = prng.uniform(0.5, 2.0) / n;
                field.phase[k] = prng.uniform(0, 2 * pi);
            }
            char pid[32];
            std::snprintf(pid, sizeof pid, "patient_%03zu", patient_no);
            for (std::size_t s = 0; s < config.samples_per_patient; ++s) {
                Rng rng(derive_seed(config.seed, {2, patient_no, s}));
                // Lung-field box with per-sample jitter; outside is clutter.
                const auto margin = n / 8;
                const auto jit = [&] { return static_cast<std::size_t>(rng.below(3)); };
                const std::size_t top = margin + jit(), left = margin + jit();
                const std::size_t bottom = n - margin - 1 - jit(), right = n - margin - 1 - jit();
                Tensor img({n, n, 1});
                Tensor mask({n, n, 1});
                // Class-specific stripe orientation and blob count.
                const double theta = pi * static_cast<double>(c) / config.classes + rng.uniform(-0.15, 0.15);
                const double period = n / 5.0;
                const double ct = std::cos(theta), st = std::sin(theta);
                const double stripe_phase = rng.uniform(0, 2 * pi);
                const std::size_t blobs = c + 1;
                std::vector<std::array<double, 3>> blob;
                for (std::size_t b = 0; b < blobs; ++b)
                    blob.push_back({rng.uniform(top + 3.0, bottom - 3.0), rng.uniform(left + 3.0, right - 3.0),
                                    n / 14.0 + rng.uniform(0, 1.0)});
                for (std::size_t y = 0; y < n; ++y)
                    for (std::size_t x = 0; x < n; ++x) {
                        const bool inside = y >= top && y <= bottom && x >= left && x <= right;
                        double v;
                        if (inside) {
                            v = field.base;
                            for (int k = 0; k < 3; ++k)
                                v += field.amp[k] * std::sin(2 * pi * (field.fy[k] * y + field.fx[k] * x) + field.phase[k]);
                            v += 30.0 * std::sin(2 * pi * (ct * y + st * x) / period + stripe_phase);
                            for (const auto& b : blob) {
                                const double d2 = (y - b[0]) * (y - b[0]) + (x - b[1]) * (x - b[1]);
                                v += 70.0 * std::exp(-d2 / (2 * b[2] * b[2]));
                            }
                            v += 5.0 * rng.normal();
                        } else {
                            v = 20.0 + 60.0 * rng.uniform();
                        }
                        img[y * n + x] = static_cast<float>(std::clamp(v, 0.0, 255.0));
                        mask[y * n + x] = inside ? 255.0f : 0.0f;
                    }
                char name[64];
                std::snprintf(name, sizeof name, "%s_%02zu.pgm", pid, s);
                const auto rel_img = std::string("images/") + name;
                const auto rel_mask = std::string("masks/") + name;
                write_pgm(out_dir / rel_img, img);
                write_pgm(out_dir / rel_mask, mask);
                Sample smp;
                smp.path = rel_img;
                smp.label = m.labels[c];
                smp.patient_id = pid;
                smp.mask = rel_mask;
                m.samples.push_back(std::move(smp));
            }
        }
    write_manifest(m, out_dir / "manifest.csv");
    return m;
}

}  // namespace ipens::data
