#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "sgrda/descriptors.hpp"

using namespace sgrda;

namespace {

PixelMatrix random_image(int h, int w, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PixelMatrix px(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) px(r, c) = u(rng);
    return px;
}

// R(r, c) = P(c, n-1-r)
PixelMatrix rotate(const PixelMatrix& p) {
    const int n = static_cast<int>(p.rows());
    PixelMatrix r(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) r(i, j) = p(j, n - 1 - i);
    return r;
}

double cell_mass(const Eigen::VectorXd& d, int cr, int cc) { return d.segment((cr * 4 + cc) * 8, 8).sum(); }

}  // namespace

TEST(Descriptors, ConstantPatchGivesZero) {
    PixelMatrix flat = PixelMatrix::Constant(20, 20, 0.7);
    for (auto kind : {DescriptorKind::sift_like, DescriptorKind::hog}) {
        Eigen::VectorXd d = describe_window(flat, kind);
        EXPECT_EQ(d.size(), 128);
        EXPECT_EQ(d.norm(), 0.0);
    }
}

TEST(Descriptors, BoundedAndUnitNorm) {
    for (unsigned seed = 0; seed < 10; ++seed) {
        PixelMatrix px = random_image(20, 20, seed);
        for (auto kind : {DescriptorKind::sift_like, DescriptorKind::hog}) {
            Eigen::VectorXd d = describe_window(px, kind);
            EXPECT_EQ(d.size(), kDescriptorDim);
            EXPECT_GE(d.minCoeff(), 0.0);
            EXPECT_LE(d.maxCoeff(), 1.0);
            EXPECT_LE(d.norm(), 1.0 + 1e-9);
            EXPECT_NEAR(d.norm(), 1.0, 1e-9);
        }
    }
}

TEST(SiftLike, VerticalStepEdge) {
    PixelMatrix px = PixelMatrix::Zero(20, 20);
    px.rightCols(10).setOnes();

    // Oracle: every non-zero central-difference gradient in the window points along +x.
    GradientField g = gradient_field(px);
    for (int r = 0; r < 20; ++r)
        for (int c = 0; c < 20; ++c)
            if (g.magnitude(r, c) > 0) EXPECT_EQ(g.orientation(r, c), 0.0);

    Eigen::VectorXd d = describe_window(px, DescriptorKind::sift_like);
    for (int cr = 0; cr < 4; ++cr) {
        for (int cc = 0; cc < 4; ++cc) {
            const double total = cell_mass(d, cr, cc);
            if (total == 0) continue;
            const auto bins = d.segment((cr * 4 + cc) * 8, 8);
            EXPECT_GE(bins[0] + std::max(bins[1], bins[7]), 0.999 * total);
        }
    }
    // the four cell rows crossing the edge carry the same dominant bin and the same per-cell
    // orientation profile; Gaussian weighting makes rows 0/3 and 1/2 equal in magnitude
    for (int cc = 1; cc <= 2; ++cc) {
        EXPECT_GT(cell_mass(d, 0, cc), 0);
        for (int cr = 0; cr < 4; ++cr) {
            Eigen::Index arg = -1;
            d.segment((cr * 4 + cc) * 8, 8).maxCoeff(&arg);
            EXPECT_EQ(arg, 0);
        }
        EXPECT_NEAR(cell_mass(d, 0, cc), cell_mass(d, 3, cc), 1e-12);
        EXPECT_NEAR(cell_mass(d, 1, cc), cell_mass(d, 2, cc), 1e-12);
    }
}

TEST(SiftLike, QuarterTurnShiftsBinsByTwo) {
    for (unsigned seed = 0; seed < 5; ++seed) {
        PixelMatrix p = random_image(20, 20, 100 + seed);
        Eigen::VectorXd a = describe_window(p, DescriptorKind::sift_like);
        Eigen::VectorXd b = describe_window(rotate(p), DescriptorKind::sift_like);
        // rotated cell (cr, cc) comes from original cell (cc, 3 - cr); angle decreases by 90 deg
        for (int cr = 0; cr < 4; ++cr)
            for (int cc = 0; cc < 4; ++cc)
                for (int bin = 0; bin < 8; ++bin)
                    EXPECT_NEAR(b[(cr * 4 + cc) * 8 + (bin + 6) % 8], a[(cc * 4 + (3 - cr)) * 8 + bin], 1e-9);
    }
}

TEST(Hog, DiagonalRampHasSingleDominantBin) {
    PixelMatrix ramp(60, 60);
    for (int r = 0; r < 60; ++r)
        for (int c = 0; c < 60; ++c) ramp(r, c) = (r + c) / 120.0;

    // standalone window: dominant bin 2 (45 deg / 22.5 deg) in every cell
    Eigen::VectorXd d = describe_window(ramp.block(20, 20, 20, 20), DescriptorKind::hog);
    for (int cell = 0; cell < 16; ++cell) {
        Eigen::Index arg = -1;
        d.segment(cell * 8, 8).maxCoeff(&arg);
        EXPECT_EQ(arg, 2);
    }

    // window inside a larger image: the gradient is exactly diagonal everywhere
    FaceImage img{ramp, "ramp", Modality::photo};
    PatchGrid grid = build_grid(60, 60, 10, 0.5);
    DescriptorBank bank = describe_image(img, grid, DescriptorKind::hog);
    const int interior = grid.index(4, 4);
    Eigen::VectorXd col = bank.columns.col(interior);
    for (int cell = 0; cell < 16; ++cell) {
        const auto bins = col.segment(cell * 8, 8);
        EXPECT_NEAR(bins[2], bins.sum(), 1e-12);
        EXPECT_GT(bins[2], 0.0);
    }
}

TEST(Hog, QuarterTurnShiftsUnsignedBinsByFour) {
    for (unsigned seed = 0; seed < 5; ++seed) {
        PixelMatrix p = random_image(20, 20, 200 + seed);
        Eigen::VectorXd a = describe_window(p, DescriptorKind::hog);
        Eigen::VectorXd b = describe_window(rotate(p), DescriptorKind::hog);
        for (int cr = 0; cr < 4; ++cr)
            for (int cc = 0; cc < 4; ++cc)
                for (int bin = 0; bin < 8; ++bin)
                    EXPECT_NEAR(b[(cr * 4 + cc) * 8 + (bin + 4) % 8], a[(cc * 4 + (3 - cr)) * 8 + bin], 1e-9);
    }
}

TEST(DescribeImage, ShapeConstantAndPurity) {
    PatchGrid grid = build_grid(100, 125, 10, 0.5);
    FaceImage flat{PixelMatrix::Constant(125, 100, 0.4), "flat", Modality::photo};
    DescriptorBank bank = describe_image(flat, grid, DescriptorKind::sift_like);
    EXPECT_EQ(bank.columns.rows(), 128);
    EXPECT_EQ(bank.columns.cols(), 456);
    EXPECT_EQ(bank.columns.norm(), 0.0);

    FaceImage a{random_image(125, 100, 9), "a", Modality::photo};
    FaceImage b = a;
    for (auto kind : {DescriptorKind::sift_like, DescriptorKind::hog}) {
        DescriptorBank ba = describe_image(a, grid, kind), bb = describe_image(b, grid, kind);
        EXPECT_TRUE(ba.columns == bb.columns);
        EXPECT_EQ(ba.kind, kind);
    }

    FaceImage wrong{PixelMatrix::Zero(120, 100), "w", Modality::photo};
    EXPECT_THROW(describe_image(wrong, grid, DescriptorKind::hog), DataError);
}

TEST(DescribeImage, ShiftByOneStepShiftsColumns) {
    PatchGrid grid = build_grid(100, 125, 10, 0.5);
    PixelMatrix base = random_image(125, 100, 11);
    PixelMatrix shifted = PixelMatrix::Zero(125, 100);
    shifted.rightCols(95) = base.leftCols(95);
    for (auto kind : {DescriptorKind::sift_like, DescriptorKind::hog}) {
        DescriptorBank a = describe_image({base, "a", Modality::photo}, grid, kind);
        DescriptorBank b = describe_image({shifted, "b", Modality::photo}, grid, kind);
        for (int r = 0; r < grid.rows; ++r)
            for (int c = 2; c <= 15; ++c)  // windows and their gradient support interior in both
                EXPECT_LT((a.columns.col(grid.index(r, c)) - b.columns.col(grid.index(r, c + 1))).norm(), 1e-12)
                    << "row " << r << " col " << c;
    }
}
