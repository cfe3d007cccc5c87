#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ipens/data.hpp"
#include "ipens/rng.hpp"

using namespace ipens;
using namespace ipens::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("ipens_data_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Tensor random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
    Tensor t({h, w, 1});
    Rng rng(seed);
    for (auto& v : t.data()) v = static_cast<float>(std::floor(rng.uniform(0, 256)));
    return t;
}

}  // namespace

TEST(Manifest, ParsesValidFile) {
    const auto m = parse_manifest(
        "path,label,patient_id,split,mask\n"
        "a.pgm,normal,p1,,\n"
        "b.pgm,covid,p1,train,mb.pgm\n"
        "c.pgm,normal,p2\n");
    ASSERT_EQ(m.samples.size(), 3u);
    EXPECT_EQ(m.labels, (std::vector<std::string>{"covid", "normal"}));
    EXPECT_EQ(m.samples[1].split, "train");
    EXPECT_EQ(m.samples[1].mask, "mb.pgm");
    EXPECT_EQ(m.label_indices(), (std::vector<int>{1, 0, 1}));
}

TEST(Manifest, MissingPatientIdNamesLine) {
    try {
        parse_manifest("path,label,patient_id\na.pgm,normal,p1\nb.pgm,normal,\n");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("patient_id"), std::string::npos);
    }
}

TEST(Manifest, DuplicatePathCitesBothLines) {
    try {
        parse_manifest("path,label,patient_id\n"
                       "a.pgm,x,p1\n"
                       "b.pgm,x,p2\n"
                       "c.pgm,x,p3\n"
                       "a.pgm,x,p4\n");
        FAIL();
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("lines 2 and 5"), std::string::npos) << msg;
    }
}

TEST(Manifest, UnknownLabelAgainstDeclaredVocabulary) {
    EXPECT_THROW(parse_manifest("# labels: normal,covid\npath,label,patient_id\na.pgm,flu,p1\n"), DataError);
    const auto m = parse_manifest("# labels: normal,covid\npath,label,patient_id\na.pgm,covid,p1\n");
    EXPECT_EQ(m.labels, (std::vector<std::string>{"normal", "covid"}));
}

TEST(Manifest, WriteThenLoadIsLossless) {
    const auto dir = scratch("manifest_rt");
    DatasetManifest m;
    m.labels = {"normal", "bacterial", "covid"};
    m.provenance = "unit test";
    m.base_dir = dir;
    for (int i = 0; i < 6; ++i)
        m.samples.push_back(Sample{"img/" + std::to_string(i) + ".pgm", m.labels[i % 3], "p" + std::to_string(i / 2),
                                   i % 2 ? "train" : "test", i % 3 ? "mask/" + std::to_string(i) + ".pgm" : ""});
    write_manifest(m, dir / "m.csv");
    const auto loaded = load_manifest(dir / "m.csv");
    EXPECT_EQ(loaded.samples, m.samples);
    EXPECT_EQ(loaded.labels, m.labels);
    EXPECT_EQ(loaded.provenance, m.provenance);
    fs::remove_all(dir);
}

TEST(Pgm, RoundTrip) {
    const auto dir = scratch("pgm");
    const auto img = random_image(7, 11, 3);
    write_pgm(dir / "a.pgm", img);
    const auto back = read_pgm(dir / "a.pgm");
    EXPECT_EQ(back.max_value, 255);
    EXPECT_EQ(back.pixels, img);
    fs::remove_all(dir);
}

TEST(Preprocess, FullMaskCropIsIdentity) {
    const auto img = random_image(12, 10, 4);
    EXPECT_TRUE(bitwise_equal(crop_to_mask(img, Tensor({12, 10, 1}, 1.0f)), img));
    const PreprocessOptions opt{.target_height = 8, .target_width = 8};
    const auto a = preprocess(img, Tensor({12, 10, 1}, 1.0f), opt);
    const auto b = preprocess(img, std::nullopt, opt);
    EXPECT_TRUE(bitwise_equal(a.image, b.image));
}

TEST(Preprocess, CropToMaskBoundingBox) {
    const auto img = random_image(6, 6, 5);
    Tensor mask({6, 6, 1});
    mask[1 * 6 + 2] = 1;
    mask[3 * 6 + 4] = 1;
    const auto c = crop_to_mask(img, mask);
    ASSERT_EQ(c.shape(), (Shape{3, 3, 1}));
    EXPECT_EQ(c[0], img[1 * 6 + 2]);
    EXPECT_EQ(c[8], img[3 * 6 + 4]);
}

TEST(Preprocess, AllZeroMaskIsAnError) {
    EXPECT_THROW(preprocess(random_image(4, 4, 1), Tensor({4, 4, 1}), {}), DataError);
    EXPECT_THROW(crop_to_mask(random_image(4, 4, 1), Tensor({4, 5, 1}, 1.0f)), DimensionError);
}

TEST(Preprocess, MedianRemovesImpulse) {
    Tensor img({5, 5, 1});
    img[2 * 5 + 2] = 200.0f;
    const auto f = median_filter3x3(img);
    EXPECT_EQ(f[2 * 5 + 2], 0.0f);
    for (float v : f.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Preprocess, MedianIdempotentOnConstantRegion) {
    const Tensor flat({6, 6, 1}, 3.5f);
    EXPECT_TRUE(bitwise_equal(median_filter3x3(median_filter3x3(flat)), median_filter3x3(flat)));
}

TEST(Preprocess, ConstantImageIsFlagged) {
    const auto r = preprocess(Tensor({9, 9, 1}, 128.0f), std::nullopt, {.target_height = 4, .target_width = 4});
    EXPECT_TRUE(r.constant_image);
    for (float v : r.image.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Preprocess, OutputIsStandardized) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto r = preprocess(random_image(20, 17, seed), std::nullopt, {.target_height = 16, .target_width = 16});
        ASSERT_FALSE(r.constant_image);
        double mean = 0, sq = 0;
        for (float v : r.image.data()) mean += v;
        mean /= r.image.size();
        for (float v : r.image.data()) sq += (v - mean) * (v - mean);
        EXPECT_NEAR(mean, 0.0, 1e-5);
        EXPECT_NEAR(sq / r.image.size(), 1.0, 1e-5);
    }
}

TEST(Preprocess, ResizeSameSizeIsIdentityAndConstantsStay) {
    const auto img = random_image(5, 5, 9);
    EXPECT_TRUE(bitwise_equal(resize_bilinear(img, 5, 5), img));
    const auto r = resize_bilinear(Tensor({3, 7, 1}, 2.0f), 11, 4);
    for (float v : r.data()) EXPECT_FLOAT_EQ(v, 2.0f);
}

TEST(Synth, CountsAndDeterminism) {
    const auto a = scratch("synth_a");
    const auto b = scratch("synth_b");
    const SynthConfig cfg{.classes = 3, .patients_per_class = 20, .samples_per_patient = 5, .image_size = 16, .seed = 3};
    const auto ma = synth_dataset(cfg, a);
    const auto mb = synth_dataset(cfg, b);
    EXPECT_EQ(ma.samples.size(), 300u);
    std::set<std::string> patients;
    for (const auto& s : ma.samples) patients.insert(s.patient_id);
    EXPECT_EQ(patients.size(), 60u);
    for (std::size_t i = 0; i < ma.samples.size(); i += 37) {
        const auto ia = read_pgm(ma.resolve(ma.samples[i].path));
        const auto ib = read_pgm(mb.resolve(mb.samples[i].path));
        EXPECT_TRUE(bitwise_equal(ia.pixels, ib.pixels));
    }
    const auto loaded = load_manifest(a / "manifest.csv");
    EXPECT_EQ(loaded.samples, ma.samples);
    const auto ds = load_dataset(loaded, {.target_height = 16, .target_width = 16});
    EXPECT_EQ(ds.images.shape(), (Shape{300, 16, 16, 1}));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Synth, RejectsDegenerateConfig) {
    EXPECT_THROW(synth_dataset({.classes = 1}, scratch("synth_bad")), UsageError);
}
