#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ssmll/csv.hpp"
#include "ssmll/data.hpp"
#include "ssmll/rng.hpp"

using namespace ssmll;

namespace {

SynthConfig base_cfg() {
    SynthConfig cfg;
    cfg.num_classes = 6;
    cfg.feature_dim = 8;
    cfg.patches = 4;
    cfg.n_total = 1200;
    cfg.n_test = 200;
    cfg.pi.assign(6, 0.3);
    cfg.seed = 11;
    return cfg;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("generation is bit-reproducible from (config, seed)") {
    const SynthConfig cfg = base_cfg();
    const SynthData a = generate_synthetic(cfg);
    const SynthData b = generate_synthetic(cfg);
    CHECK(a.labels.data == b.labels.data);
    CHECK(a.instances.global.data == b.instances.global.data);
    CHECK(a.instances.patches.data == b.instances.patches.data);

    SynthConfig other = cfg;
    other.seed = 12;
    const SynthData c = generate_synthetic(other);
    CHECK(a.labels.data != c.labels.data);
}

TEST_CASE("config validation catches bad blocks and parameters") {
    SynthConfig cfg = base_cfg();
    cfg.blocks = {{0, 1, 2}, {2, 3}};  // overlap
    CHECK_THROWS_AS(generate_synthetic(cfg), config_error);
    cfg = base_cfg();
    cfg.blocks = {{0, 99}};
    CHECK_THROWS_AS(generate_synthetic(cfg), config_error);
    cfg = base_cfg();
    cfg.rho_corr = 1.0;
    CHECK_THROWS_AS(generate_synthetic(cfg), config_error);
    cfg = base_cfg();
    cfg.pi[0] = 0.0;
    CHECK_THROWS_AS(generate_synthetic(cfg), config_error);
    cfg = base_cfg();
    cfg.n_test = cfg.n_total;
    CHECK_THROWS_AS(generate_synthetic(cfg), config_error);
}

TEST_CASE("uncorrelated labels show near-zero pairwise correlation") {
    SynthConfig cfg = base_cfg();
    cfg.n_total = 5000;
    cfg.n_test = 100;
    cfg.rho_corr = 0.0;
    cfg.require_positive = false;
    cfg.pi.assign(cfg.num_classes, 0.5);
    const SynthData data = generate_synthetic(cfg);
    const std::size_t n = cfg.n_total, k = cfg.num_classes;
    std::vector<double> mean(k, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < k; ++c) mean[c] += data.labels(i, c);
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a + 1; b < k; ++b) {
            double cov = 0.0, va = 0.0, vb = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double da = data.labels(i, a) - mean[a];
                const double db = data.labels(i, b) - mean[b];
                cov += da * db;
                va += da * da;
                vb += db * db;
            }
            const double r = cov / std::sqrt(va * vb);
            CHECK(std::abs(r) < 0.05);
        }
    }
}

TEST_CASE("blocked correlation raises within-block co-occurrence") {
    SynthConfig cfg = base_cfg();
    cfg.n_total = 5000;
    cfg.n_test = 100;
    cfg.rho_corr = 0.7;
    cfg.blocks = {{0, 1, 2}};
    cfg.require_positive = false;
    cfg.pi.assign(cfg.num_classes, 0.5);
    const SynthData data = generate_synthetic(cfg);
    auto corr = [&](std::size_t a, std::size_t b) {
        double ma = 0.0, mb = 0.0;
        const double n = static_cast<double>(cfg.n_total);
        for (std::size_t i = 0; i < cfg.n_total; ++i) {
            ma += data.labels(i, a);
            mb += data.labels(i, b);
        }
        ma /= n;
        mb /= n;
        double cov = 0.0, va = 0.0, vb = 0.0;
        for (std::size_t i = 0; i < cfg.n_total; ++i) {
            const double da = data.labels(i, a) - ma;
            const double db = data.labels(i, b) - mb;
            cov += da * db;
            va += da * da;
            vb += db * db;
        }
        return cov / std::sqrt(va * vb);
    };
    CHECK(corr(0, 1) > 0.3);
    CHECK(corr(1, 2) > 0.3);
    CHECK(std::abs(corr(0, 4)) < 0.06);
}

TEST_CASE("positive frequency tracks pi") {
    SynthConfig cfg = base_cfg();
    cfg.n_total = 5000;
    cfg.n_test = 100;
    cfg.require_positive = false;
    cfg.pi.assign(cfg.num_classes, 0.5);
    const SynthData data = generate_synthetic(cfg);
    for (std::size_t k = 0; k < cfg.num_classes; ++k) {
        double freq = 0.0;
        for (std::size_t i = 0; i < cfg.n_total; ++i) freq += data.labels(i, k);
        freq /= static_cast<double>(cfg.n_total);
        CHECK(std::abs(freq - 0.5) < 0.03);
    }
}

TEST_CASE("mean labels per instance hits a configured target") {
    SynthConfig cfg;
    cfg.num_classes = 80;
    cfg.feature_dim = 8;
    cfg.patches = 4;
    cfg.n_total = 5000;
    cfg.n_test = 100;
    cfg.pi.assign(80, 2.9 / 80.0);
    cfg.require_positive = false;
    cfg.seed = 21;
    const SynthData data = generate_synthetic(cfg);
    double total = 0.0;
    for (double v : data.labels.data) total += v;
    const double mean = total / static_cast<double>(cfg.n_total);
    CHECK(std::abs(mean - 2.9) < 0.15);
}

TEST_CASE("require_positive leaves no empty label rows") {
    SynthConfig cfg = base_cfg();
    cfg.pi.assign(cfg.num_classes, 0.05);
    cfg.require_positive = true;
    const SynthData data = generate_synthetic(cfg);
    for (std::size_t i = 0; i < cfg.n_total; ++i) {
        double row = 0.0;
        for (std::size_t k = 0; k < cfg.num_classes; ++k) row += data.labels(i, k);
        CHECK(row >= 1.0);
    }
}

TEST_CASE("normal_quantile matches known values") {
    CHECK(std::abs(normal_quantile(0.5)) < 1e-12);
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-9));
    CHECK(normal_quantile(0.1586552539314571) == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("split sizes, determinism, and partition") {
    SynthConfig cfg = base_cfg();
    cfg.n_total = 1200;
    cfg.n_test = 200;
    const SynthData data = generate_synthetic(cfg);

    const SsmllDataset ds = split_labeled(data, 0.05, 7);
    CHECK(ds.labeled.size() == 50);  // round(0.05 * 1000)
    CHECK(ds.unlabeled.size() == 950);
    CHECK(ds.test.size() == 200);
    CHECK(ds.audit_labels().rows == 950);

    const SsmllDataset again = split_labeled(data, 0.05, 7);
    CHECK(ds.labeled.global.data == again.labeled.global.data);
    CHECK(ds.test_labels.data == again.test_labels.data);

    // p so small that rounding gives 0 still yields one labeled instance
    const SsmllDataset tiny = split_labeled(data, 1e-4, 7);
    CHECK(tiny.labeled.size() == 1);

    CHECK_THROWS_AS(split_labeled(data, 0.0, 7), config_error);
    CHECK_THROWS_AS(split_labeled(data, 1.0, 7), config_error);
}

TEST_CASE("split flags classes without labeled positives") {
    SynthConfig cfg = base_cfg();
    cfg.pi.assign(cfg.num_classes, 0.02);
    cfg.require_positive = false;
    cfg.n_total = 400;
    cfg.n_test = 100;
    const SynthData data = generate_synthetic(cfg);
    const SsmllDataset ds = split_labeled(data, 0.02, 3);  // ~6 labeled instances
    // with pi = 0.02 and ~6 labeled rows, some class almost surely has no positive
    CHECK(!ds.degenerate_labeled_classes.empty());
}

TEST_CASE("csv round trip: empty, exact values, random matrix") {
    const std::string path = temp_path("ssmll_csv_test.csv");

    DenseMatrix empty(0, 3);
    save_matrix(path, empty);
    const DenseMatrix e = load_matrix(path);
    CHECK(e.rows == 0);
    CHECK(e.cols == 3);

    DenseMatrix small(1, 1);
    small(0, 0) = 0.1;
    save_matrix(path, small);
    CHECK(load_matrix(path)(0, 0) == 0.1);

    Rng rng(31);
    DenseMatrix big(1000, 80);
    for (auto& v : big.data) v = rng.gaussian() * std::pow(10.0, rng.uniform01() * 6.0 - 3.0);
    save_matrix(path, big);
    const DenseMatrix back = load_matrix(path);
    REQUIRE(back.rows == big.rows);
    REQUIRE(back.cols == big.cols);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < big.data.size(); ++i)
        max_diff = std::max(max_diff, std::abs(big.data[i] - back.data[i]));
    CHECK(max_diff < 1e-12);
    CHECK(big.data == back.data);  // %.17g round-trips exactly
    std::remove(path.c_str());
}

TEST_CASE("csv parse errors carry positions") {
    const std::string path = temp_path("ssmll_csv_bad.csv");
    {
        std::ofstream out(path);
        out << "class_0,class_1\n0.5,0.25\n0.5\n";
    }
    CHECK_THROWS_WITH_AS(load_matrix(path), doctest::Contains("line 3"), data_error);
    {
        std::ofstream out(path);
        out << "class_0,class_1\n0.5,abc\n";
    }
    CHECK_THROWS_WITH_AS(load_matrix(path), doctest::Contains("column 2"), data_error);
    {
        std::ofstream out(path);
        out << "x,y\n1,2\n";
    }
    CHECK_THROWS_AS(load_matrix(path), data_error);
    {
        std::ofstream out(path);  // empty file
    }
    CHECK_THROWS_WITH_AS(load_matrix(path), doctest::Contains("missing header"), data_error);
    std::remove(path.c_str());
}
