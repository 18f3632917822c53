#pragma once

#include "mitunet/image.hpp"
#include "mitunet/train.hpp"

namespace mitunet {

// Aligned text table with the published column order — Loss (a/b), Recall,
// Precision, Accuracy, mIoU, percentages at 2 decimals — rows sorted by mIoU
// descending. Empty input yields the header only.
std::string format_report_table(const std::vector<AblationRow>& rows);

// Precision/recall-vs-alpha line plot on a fixed 480x320 canvas. Fully
// deterministic rasterization so the output can be locked by hash.
Image render_trend_plot(const std::vector<AblationRow>& rows);

// 5x7 bitmap text, scale >= 1. Exposed for the plot golden tests.
void draw_text(Image& img, long y, long x, const std::string& text,
               uint8_t r, uint8_t g, uint8_t b, long scale = 1);

// FNV-1a over extents plus raw RGB bytes; independent of PNG encoding.
uint64_t image_hash(const Image& img);

}  // namespace mitunet
