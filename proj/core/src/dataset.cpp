#include "tuna/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace tuna {

namespace {

uint8_t to_byte(double v) {
    const double clamped = std::min(1.0, std::max(0.0, v));
    return static_cast<uint8_t>(std::lround(clamped * 255.0));
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& is) {
    std::string tok;
    int c = is.get();
    while (is) {
        if (c == '#') {
            while (is && c != '\n') {
                c = is.get();
            }
        } else if (std::isspace(c)) {
            c = is.get();
        } else {
            break;
        }
    }
    while (is && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = is.get();
    }
    return tok;
}

struct PnmHeader {
    std::string magic;
    int64_t w = 0;
    int64_t h = 0;
    int64_t maxval = 0;
};

PnmHeader read_pnm_header(std::istream& is, const std::filesystem::path& path) {
    PnmHeader hdr;
    hdr.magic = next_token(is);
    try {
        hdr.w = std::stoll(next_token(is));
        hdr.h = std::stoll(next_token(is));
        hdr.maxval = std::stoll(next_token(is));
    } catch (const std::exception&) {
        throw DataError("'" + path.string() + "': malformed PNM header");
    }
    if (hdr.w <= 0 || hdr.h <= 0) {
        throw DataError("'" + path.string() + "': invalid PNM dimensions");
    }
    if (hdr.maxval != 255) {
        throw DataError("'" + path.string() + "': only 8-bit PNM supported (maxval 255)");
    }
    return hdr;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("write_ppm: expected image [3,H,W], got " + shape_str(image.shape()));
    }
    const int64_t h = image.dim(1);
    const int64_t w = image.dim(2);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    os << "P6\n" << w << " " << h << "\n255\n";
    const auto& data = image.data();
    std::vector<uint8_t> row(static_cast<size_t>(w * 3));
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            for (int64_t c = 0; c < 3; ++c) {
                row[x * 3 + c] = to_byte(data[(c * h + y) * w + x]);
            }
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) {
        throw IoError("failed while writing '" + path.string() + "'");
    }
}

Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    const PnmHeader hdr = read_pnm_header(is, path);
    if (hdr.magic != "P6") {
        throw DataError("'" + path.string() + "': expected binary PPM (P6), got '" + hdr.magic +
                        "'");
    }
    std::vector<uint8_t> raw(static_cast<size_t>(hdr.w * hdr.h * 3));
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) {
        throw DataError("'" + path.string() + "': truncated pixel data");
    }
    Tensor image = Tensor::zeros({3, hdr.h, hdr.w});
    auto& data = image.mutable_data();
    for (int64_t y = 0; y < hdr.h; ++y) {
        for (int64_t x = 0; x < hdr.w; ++x) {
            for (int64_t c = 0; c < 3; ++c) {
                data[(c * hdr.h + y) * hdr.w + x] =
                    static_cast<double>(raw[(y * hdr.w + x) * 3 + c]) / 255.0;
            }
        }
    }
    return image;
}

std::array<int64_t, 2> read_pnm_size(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    const PnmHeader hdr = read_pnm_header(is, path);
    return {hdr.h, hdr.w};
}

void write_pgm(const std::filesystem::path& path, const IntGrid& mask) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    os << "P5\n" << mask.w << " " << mask.h << "\n255\n";
    std::vector<uint8_t> bytes(mask.v.size());
    for (size_t i = 0; i < mask.v.size(); ++i) {
        if (mask.v[i] < 0 || mask.v[i] > 255) {
            throw DataError("write_pgm: class id " + std::to_string(mask.v[i]) +
                            " does not fit 8-bit PGM");
        }
        bytes[i] = static_cast<uint8_t>(mask.v[i]);
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) {
        throw IoError("failed while writing '" + path.string() + "'");
    }
}

IntGrid read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    const PnmHeader hdr = read_pnm_header(is, path);
    if (hdr.magic != "P5") {
        throw DataError("'" + path.string() + "': expected binary PGM (P5), got '" + hdr.magic +
                        "'");
    }
    std::vector<uint8_t> raw(static_cast<size_t>(hdr.w * hdr.h));
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) {
        throw DataError("'" + path.string() + "': truncated pixel data");
    }
    IntGrid mask(hdr.h, hdr.w);
    for (size_t i = 0; i < raw.size(); ++i) {
        mask.v[i] = raw[i];
    }
    return mask;
}

Dataset load_dataset(const std::filesystem::path& dir, int64_t num_classes, int32_t ignore_index,
                     LoadReport* report) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("dataset directory '" + dir.string() + "' does not exist");
    }
    const std::string img_suffix = ".img.ppm";
    std::map<std::string, std::filesystem::path> images;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > img_suffix.size() &&
            name.compare(name.size() - img_suffix.size(), img_suffix.size(), img_suffix) == 0) {
            images.emplace(name.substr(0, name.size() - img_suffix.size()), entry.path());
        }
    }
    Dataset data;
    LoadReport local;
    for (const auto& [id, img_path] : images) {
        const std::filesystem::path mask_path = dir / (id + ".mask.pgm");
        if (!std::filesystem::exists(mask_path)) {
            local.warnings.push_back("sample '" + id + "': missing mask file, skipped");
            continue;
        }
        SampleRecord rec;
        rec.id = id;
        rec.image = read_ppm(img_path);
        rec.mask = read_pgm(mask_path);
        if (rec.mask.h != rec.image.dim(1) || rec.mask.w != rec.image.dim(2)) {
            local.warnings.push_back("sample '" + id + "': image " +
                                     std::to_string(rec.image.dim(1)) + "x" +
                                     std::to_string(rec.image.dim(2)) + " vs mask " +
                                     std::to_string(rec.mask.h) + "x" + std::to_string(rec.mask.w) +
                                     ", skipped");
            continue;
        }
        bool bad_id = false;
        for (int32_t v : rec.mask.v) {
            if (v != ignore_index && (v < 0 || v >= num_classes)) {
                local.warnings.push_back("sample '" + id + "': class id " + std::to_string(v) +
                                         " outside [0," + std::to_string(num_classes) +
                                         "), skipped");
                bad_id = true;
                break;
            }
        }
        if (bad_id) {
            continue;
        }
        data.samples.push_back(std::move(rec));
        ++local.loaded;
    }
    if (report) {
        *report = std::move(local);
    }
    return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const SampleRecord& rec : data.samples) {
        write_ppm(dir / (rec.id + ".img.ppm"), rec.image);
        write_pgm(dir / (rec.id + ".mask.pgm"), rec.mask);
    }
}

namespace {

std::array<double, 3> hsv_to_rgb(double hue_deg, double sat, double val) {
    const double h = std::fmod(std::fmod(hue_deg, 360.0) + 360.0, 360.0) / 60.0;
    const int sector = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double p = val * (1.0 - sat);
    const double q = val * (1.0 - sat * f);
    const double t = val * (1.0 - sat * (1.0 - f));
    switch (sector) {
        case 0: return {val, t, p};
        case 1: return {q, val, p};
        case 2: return {p, val, t};
        case 3: return {p, q, val};
        case 4: return {t, p, val};
        default: return {val, p, q};
    }
}

}  // namespace

std::array<double, 3> class_color(int64_t cls, int64_t variant, int64_t num_classes) {
    if (cls == 0) {
        return {0.25, 0.25, 0.25};
    }
    // 2(K-1) hues; a class owns hue (cls-1) and the hue half a circle away,
    // so neighboring classes interleave.
    const int64_t spokes = 2 * (num_classes - 1);
    const int64_t idx = (cls - 1) + variant * (num_classes - 1);
    return hsv_to_rgb(360.0 * static_cast<double>(idx) / static_cast<double>(spokes), 0.8, 0.85);
}

Dataset generate_synthetic(const SynthSpec& spec, Rng& rng) {
    if (spec.num_classes < 2) {
        throw ConfigError("generate_synthetic: need at least 2 classes");
    }
    if (spec.size < 8) {
        throw ConfigError("generate_synthetic: image size must be >= 8");
    }
    Dataset data;
    const int64_t s = spec.size;
    for (int64_t i = 0; i < spec.num_images; ++i) {
        SampleRecord rec;
        rec.id = "synth_" + std::to_string(i);
        rec.mask = IntGrid(s, s, 0);
        rec.image = Tensor::zeros({3, s, s});
        auto& img = rec.image.mutable_data();
        const auto bg = class_color(0, 0, spec.num_classes);
        for (int64_t c = 0; c < 3; ++c) {
            std::fill_n(img.begin() + c * s * s, s * s, bg[c]);
        }
        const int64_t n_shapes = rng.uniform_int(2, 5);
        for (int64_t shape_i = 0; shape_i < n_shapes; ++shape_i) {
            const int64_t cls = rng.uniform_int(1, spec.num_classes - 1);
            const int64_t variant = rng.uniform_int(0, 1);
            const bool ellipse = rng.uniform_int(0, 1) == 1;
            const int64_t cy = rng.uniform_int(s / 4, s - s / 4 - 1);
            const int64_t cx = rng.uniform_int(s / 4, s - s / 4 - 1);
            const int64_t ry = rng.uniform_int(s / 8, s / 3);
            const int64_t rx = rng.uniform_int(s / 8, s / 3);
            const auto color = class_color(cls, variant, spec.num_classes);
            for (int64_t y = std::max<int64_t>(0, cy - ry); y <= std::min(s - 1, cy + ry); ++y) {
                for (int64_t x = std::max<int64_t>(0, cx - rx); x <= std::min(s - 1, cx + rx);
                     ++x) {
                    if (ellipse) {
                        const double dy = static_cast<double>(y - cy) / static_cast<double>(ry);
                        const double dx = static_cast<double>(x - cx) / static_cast<double>(rx);
                        if (dy * dy + dx * dx > 1.0) {
                            continue;
                        }
                    }
                    rec.mask.at(y, x) = static_cast<int32_t>(cls);
                    for (int64_t c = 0; c < 3; ++c) {
                        img[(c * s + y) * s + x] = color[c];
                    }
                }
            }
        }
        if (spec.noise_sigma > 0.0) {
            for (double& v : img) {
                v = std::min(1.0, std::max(0.0, v + rng.normal() * spec.noise_sigma));
            }
        }
        data.samples.push_back(std::move(rec));
    }
    return data;
}

Tensor resize_image_bilinear(const Tensor& image, int64_t out_h, int64_t out_w) {
    if (image.rank() != 3) {
        throw ShapeError("resize_image_bilinear: expected [C,H,W], got " +
                         shape_str(image.shape()));
    }
    const int64_t c = image.dim(0);
    const int64_t h = image.dim(1);
    const int64_t w = image.dim(2);
    Tensor batched = reshape(image, {1, c, h, w});
    return reshape(upsample_bilinear(batched, out_h, out_w), {c, out_h, out_w});
}

IntGrid resize_mask_nearest(const IntGrid& mask, int64_t out_h, int64_t out_w) {
    IntGrid out(out_h, out_w);
    const double sy = static_cast<double>(mask.h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(mask.w) / static_cast<double>(out_w);
    for (int64_t y = 0; y < out_h; ++y) {
        int64_t iy = static_cast<int64_t>((static_cast<double>(y) + 0.5) * sy);
        iy = std::min(iy, mask.h - 1);
        for (int64_t x = 0; x < out_w; ++x) {
            int64_t ix = static_cast<int64_t>((static_cast<double>(x) + 0.5) * sx);
            ix = std::min(ix, mask.w - 1);
            out.at(y, x) = mask.at(iy, ix);
        }
    }
    return out;
}

Batch assemble_batch(const std::vector<const SampleRecord*>& samples, int64_t crop,
                     int32_t ignore_index) {
    if (samples.empty()) {
        throw ContractError("assemble_batch: empty batch");
    }
    const int64_t b = static_cast<int64_t>(samples.size());
    Batch batch;
    batch.images = Tensor::zeros({b, 3, crop, crop});
    auto& out = batch.images.mutable_data();
    for (int64_t i = 0; i < b; ++i) {
        const SampleRecord& rec = *samples[i];
        const int64_t h = rec.image.dim(1);
        const int64_t w = rec.image.dim(2);
        const double s = std::min(static_cast<double>(crop) / static_cast<double>(h),
                                  static_cast<double>(crop) / static_cast<double>(w));
        const int64_t nh = std::min<int64_t>(crop, std::max<int64_t>(1, std::llround(h * s)));
        const int64_t nw = std::min<int64_t>(crop, std::max<int64_t>(1, std::llround(w * s)));
        Tensor img = (nh == h && nw == w) ? rec.image : resize_image_bilinear(rec.image, nh, nw);
        IntGrid mask =
            (nh == h && nw == w) ? rec.mask : resize_mask_nearest(rec.mask, nh, nw);
        const auto& src = img.data();
        for (int64_t c = 0; c < 3; ++c) {
            for (int64_t y = 0; y < nh; ++y) {
                for (int64_t x = 0; x < nw; ++x) {
                    out[((i * 3 + c) * crop + y) * crop + x] = src[(c * nh + y) * nw + x];
                }
            }
        }
        IntGrid padded(crop, crop, ignore_index);
        for (int64_t y = 0; y < nh; ++y) {
            for (int64_t x = 0; x < nw; ++x) {
                padded.at(y, x) = mask.at(y, x);
            }
        }
        batch.masks.push_back(std::move(padded));
    }
    return batch;
}

}  // namespace tuna
