"""Data model, concentration conversion, synthetic corpus, and file formats."""

import numpy as np
import pytest

from specnet.datasets import (
    CLASS_ORDER,
    CONVERSION_FACTORS,
    N_CHANNELS,
    VOC_CLASSES,
    VOC_SLOT,
    Corpus,
    DataFormatError,
    Peak,
    PeakTemplate,
    Spectrum,
    VocClass,
    balanced_recipe,
    baseline_profile,
    build_corpus,
    cell_concentration,
    channel_grid,
    class_signature,
    conversion_factor,
    default_template,
    kfold_split,
    load_template_json,
    one_hot,
    read_spectra_csv,
    regression_target,
    save_template_json,
    starved_recipe,
    synth_spectrum,
    write_spectra_csv,
)


class TestClassTaxonomy:
    def test_order_is_alphabetical_and_frozen(self):
        labels = [c.label for c in CLASS_ORDER]
        assert labels == sorted(labels)
        assert labels == [
            "acetone", "air", "benzene", "ethanol", "isopropanol",
            "m_xylene", "o_xylene", "p_xylene", "styrene", "toluene",
        ]

    def test_air_is_index_one_and_has_no_slot(self):
        assert VocClass.AIR.index == 1
        assert VocClass.AIR not in VOC_SLOT
        assert len(VOC_CLASSES) == 9

    def test_round_trip_labels(self):
        for c in CLASS_ORDER:
            assert VocClass.from_label(c.label) is c
        with pytest.raises(ValueError, match="unknown VOC class"):
            VocClass.from_label("argon")


class TestConcentrationConversion:
    def test_styrene_example(self):
        c, err = cell_concentration(100.0, 1.0, 0.6, 2.0)
        assert c == pytest.approx(23.076923076923077, rel=1e-12)
        assert err == pytest.approx(0.23076923076923078, rel=1e-12)

    def test_acetone_example(self):
        c, _ = cell_concentration(10.0, 2.75, 0.6, 2.0)
        assert c == pytest.approx(6.346153846153846, rel=1e-12)

    def test_zero_reading_limit(self):
        c, err = cell_concentration(0.0, 2.75, 0.6, 2.0)
        assert c == 0.0
        assert err > 0

    def test_linearity_and_homogeneity(self):
        c1, _ = cell_concentration(7.0, 1.25, 0.6, 2.0)
        c2, _ = cell_concentration(14.0, 1.25, 0.6, 2.0)
        c3, _ = cell_concentration(7.0, 2.5, 0.6, 2.0)
        assert c2 == pytest.approx(2 * c1, rel=1e-12)
        assert c3 == pytest.approx(2 * c1, rel=1e-12)

    def test_non_positive_volume_rejected(self):
        with pytest.raises(ValueError, match="volume"):
            cell_concentration(10.0, 1.0, 0.0, 2.0)
        with pytest.raises(ValueError, match="volume"):
            cell_concentration(10.0, 1.0, 0.6, -1.0)

    def test_conversion_factor_table(self):
        assert conversion_factor(VocClass.ETHANOL) == 30
        assert conversion_factor(VocClass.STYRENE) == 1
        assert conversion_factor(VocClass.P_XYLENE) == 0.975
        expected = {
            VocClass.ACETONE: 2.75, VocClass.BENZENE: 1.325, VocClass.ETHANOL: 30.0,
            VocClass.ISOPROPANOL: 15.0, VocClass.M_XYLENE: 1.1, VocClass.O_XYLENE: 1.15,
            VocClass.P_XYLENE: 0.975, VocClass.STYRENE: 1.0, VocClass.TOLUENE: 1.25,
        }
        assert CONVERSION_FACTORS == expected

    def test_air_has_no_conversion_factor(self):
        with pytest.raises(ValueError, match="air"):
            conversion_factor(VocClass.AIR)


class TestChannelGrid:
    def test_endpoints_and_length(self):
        grid = channel_grid()
        assert len(grid) == 622
        assert grid[0] == 700.0
        assert grid[-1] == 1300.0

    def test_uniform_spacing(self):
        grid = channel_grid()
        spacing = np.diff(grid)
        assert np.allclose(spacing, 600.0 / 621.0, atol=1e-12)


class TestEncodings:
    def test_air_one_hot_and_target(self):
        oh = one_hot(VocClass.AIR)
        assert oh[1] == 1.0 and oh.sum() == 1.0
        assert np.array_equal(regression_target(VocClass.AIR, 0.0), np.zeros(9))

    def test_styrene_target_slot(self):
        t = regression_target(VocClass.STYRENE, 12.5)
        assert t[VOC_SLOT[VocClass.STYRENE]] == 12.5
        assert np.count_nonzero(t) == 1

    def test_target_sums_to_concentration(self):
        for voc in VOC_CLASSES:
            assert regression_target(voc, 3.75).sum() == 3.75

    def test_negative_concentration_rejected(self):
        with pytest.raises(ValueError):
            regression_target(VocClass.BENZENE, -1.0)


def _noise_free_template(baseline=0.0):
    t = default_template()
    return PeakTemplate(peaks=t.peaks, baseline_amplitude=baseline, noise_sigma=0.0)


class TestSynthSpectrum:
    def test_zero_concentration_no_noise_no_baseline_is_flat_zero(self):
        s = synth_spectrum(_noise_free_template(), VocClass.BENZENE, 0.0)
        assert np.all(s.absorbance == 0.0)

    def test_doubling_concentration_doubles_signal_above_baseline(self):
        t = _noise_free_template(baseline=0.05)
        base = baseline_profile(t)
        s1 = synth_spectrum(t, VocClass.ETHANOL, 10.0)
        s2 = synth_spectrum(t, VocClass.ETHANOL, 20.0)
        assert np.allclose(s2.absorbance - base, 2.0 * (s1.absorbance - base), atol=1e-12)

    def test_peak_height_matches_closed_form(self):
        # height at one peak center = conc * (own strength + lorentzian cross-terms)
        t = _noise_free_template()
        conc = 30.0
        grid = channel_grid()
        for voc in (VocClass.ACETONE, VocClass.O_XYLENE):
            peaks = t.peaks[voc]
            k = 0
            expected = peaks[k].strength_per_ppm
            for j, p in enumerate(peaks):
                if j != k:
                    d = peaks[k].center_cm1 - p.center_cm1
                    expected += p.strength_per_ppm * p.width_cm1**2 / (d**2 + p.width_cm1**2)
            expected *= conc
            s = synth_spectrum(t, voc, conc)
            channel = int(np.argmin(np.abs(grid - peaks[k].center_cm1)))
            # the sampled grid point sits within half a channel of the center
            signature = class_signature(t, voc, grid)[channel] * conc
            assert s.absorbance[channel] == pytest.approx(signature, rel=1e-12)
            exact = conc * class_signature(t, voc, np.array([peaks[k].center_cm1]))[0]
            assert exact == pytest.approx(expected, rel=1e-12)

    def test_monotone_in_concentration_at_peak_centers(self):
        t = _noise_free_template()
        grid = channel_grid()
        for voc in VOC_CLASSES:
            heights = []
            for conc in (5.0, 20.0, 60.0):
                s = synth_spectrum(t, voc, conc)
                channel = int(np.argmin(np.abs(grid - t.peaks[voc][0].center_cm1)))
                heights.append(s.absorbance[channel])
            assert heights[0] < heights[1] < heights[2]

    def test_negative_concentration_rejected(self):
        with pytest.raises(ValueError):
            synth_spectrum(default_template(), VocClass.BENZENE, -2.0)

    def test_air_requires_zero_concentration(self):
        with pytest.raises(ValueError):
            synth_spectrum(default_template(), VocClass.AIR, 1.0)

    def test_generated_spectrum_meets_type_invariants(self):
        rng = np.random.default_rng(0)
        s = synth_spectrum(default_template(), VocClass.TOLUENE, 40.0, rng)
        assert s.absorbance.shape == (N_CHANNELS,)
        assert np.all(s.absorbance >= 0)
        assert np.all(np.isfinite(s.absorbance))


class TestTemplateInvariants:
    def test_default_template_validates(self):
        t = default_template()
        for voc in VOC_CLASSES:
            assert len(t.peaks[voc]) >= 2
        assert t._overlapping_pairs() >= 2

    def test_single_peak_class_rejected(self):
        peaks = dict(default_template().peaks)
        peaks[VocClass.BENZENE] = (Peak(1038, 10, 0.014),)
        with pytest.raises(ValueError, match="at least 2"):
            PeakTemplate(peaks=peaks, baseline_amplitude=0.0, noise_sigma=0.0)

    def test_no_overlap_rejected(self):
        peaks = {}
        center = 710.0
        for voc in CLASS_ORDER:
            if voc is VocClass.AIR:
                peaks[voc] = ()
                continue
            peaks[voc] = (Peak(center, 1.0, 0.01), Peak(center + 30.0, 1.0, 0.01))
            center += 60.0
        with pytest.raises(ValueError, match="overlap"):
            PeakTemplate(peaks=peaks, baseline_amplitude=0.0, noise_sigma=0.0)


class TestCorpus:
    def test_balanced_counts_and_stratification(self):
        corpus = build_corpus(balanced_recipe(seed=7, per_class=100))
        assert len(corpus) == 1000
        for voc in CLASS_ORDER:
            idx = [i for i, s in enumerate(corpus.spectra) if s.label is voc]
            for fold in range(5):
                assert sum(1 for i in idx if corpus.folds[i] == fold) == 20

    def test_same_seed_reproduces_bitwise(self):
        c1 = build_corpus(balanced_recipe(seed=11, per_class=10))
        c2 = build_corpus(balanced_recipe(seed=11, per_class=10))
        assert np.array_equal(c1.folds, c2.folds)
        for a, b in zip(c1.spectra, c2.spectra):
            assert np.array_equal(a.absorbance, b.absorbance)
            assert a.concentration == b.concentration

    def test_starved_ratio(self):
        corpus = build_corpus(starved_recipe(seed=3))
        counts = {voc: sum(1 for s in corpus.spectra if s.label is voc) for voc in CLASS_ORDER}
        biggest = max(counts.values())
        assert counts[VocClass.O_XYLENE] / biggest <= 0.02
        assert counts[VocClass.P_XYLENE] / biggest <= 0.02

    def test_empty_recipe_rejected(self):
        recipe = balanced_recipe(seed=1, per_class=0)
        with pytest.raises(ValueError, match="empty"):
            build_corpus(recipe)

    def test_kfold_partition(self):
        corpus = build_corpus(balanced_recipe(seed=5, per_class=10))
        train, val = kfold_split(corpus, 2)
        assert len(train) + len(val) == len(corpus)
        train_ids = {id(s) for s in train}
        assert all(id(s) not in train_ids for s in val)

    def test_fold_rotation_covers_each_spectrum_once(self):
        corpus = build_corpus(balanced_recipe(seed=5, per_class=10))
        seen = []
        for fold in range(5):
            _, val = kfold_split(corpus, fold)
            seen.extend(id(s) for s in val)
        assert sorted(seen) == sorted(id(s) for s in corpus.spectra)

    def test_validation_fraction_per_class(self):
        corpus = build_corpus(balanced_recipe(seed=9, per_class=23))
        for fold in range(5):
            _, val = kfold_split(corpus, fold)
            for voc in CLASS_ORDER:
                count = sum(1 for s in val if s.label is voc)
                assert abs(count - 23 / 5) <= 1

    def test_fold_out_of_range(self):
        corpus = build_corpus(balanced_recipe(seed=5, per_class=10))
        with pytest.raises(ValueError):
            kfold_split(corpus, 5)

    def test_mismatched_fold_vector_rejected(self):
        corpus = build_corpus(balanced_recipe(seed=5, per_class=10))
        with pytest.raises(ValueError):
            Corpus(corpus.spectra, corpus.folds[:-1])


class TestSpectrumInvariants:
    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError, match="622"):
            Spectrum(np.zeros(100), VocClass.BENZENE, 1.0)

    def test_negative_absorbance_rejected(self):
        a = np.zeros(N_CHANNELS)
        a[5] = -0.1
        with pytest.raises(ValueError):
            Spectrum(a, VocClass.BENZENE, 1.0)

    def test_air_with_concentration_rejected(self):
        with pytest.raises(ValueError, match="air"):
            Spectrum(np.zeros(N_CHANNELS), VocClass.AIR, 3.0)

    def test_unknown_provenance_rejected(self):
        with pytest.raises(ValueError, match="provenance"):
            Spectrum(np.zeros(N_CHANNELS), VocClass.BENZENE, 1.0, provenance="guessed")


class TestSpectraCsv:
    def _spectra(self):
        rng = np.random.default_rng(21)
        t = default_template()
        return [
            synth_spectrum(t, VocClass.ACETONE, 12.25, rng),
            synth_spectrum(t, VocClass.AIR, 0.0, rng),
            synth_spectrum(t, VocClass.P_XYLENE, 55.5, rng),
        ]

    def test_round_trip_is_bitwise(self, tmp_path):
        path = tmp_path / "spectra.csv"
        spectra = self._spectra()
        write_spectra_csv(path, spectra)
        loaded = read_spectra_csv(path)
        assert len(loaded) == len(spectra)
        for a, b in zip(spectra, loaded):
            assert a.label is b.label
            assert a.concentration == b.concentration
            assert np.array_equal(a.absorbance, b.absorbance)

    def test_provenance_column_round_trip(self, tmp_path):
        path = tmp_path / "spectra.csv"
        write_spectra_csv(path, self._spectra(), include_provenance=True)
        loaded = read_spectra_csv(path)
        assert all(s.provenance == "synthetic_corpus" for s in loaded)
        header = path.read_text().splitlines()[1]
        assert header.split(",")[:3] == ["class", "concentration_ppm", "provenance"]

    def test_field_count(self, tmp_path):
        path = tmp_path / "spectra.csv"
        write_spectra_csv(path, self._spectra())
        rows = path.read_text().splitlines()
        assert rows[0] == "# format_version=1"
        assert len(rows[2].split(",")) == 2 + 622

    def test_missing_version_comment(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("class,concentration_ppm\n")
        with pytest.raises(DataFormatError, match=r"bad.csv:1:1"):
            read_spectra_csv(path)

    def test_bad_float_reports_line_and_column(self, tmp_path):
        path = tmp_path / "spectra.csv"
        write_spectra_csv(path, self._spectra())
        lines = path.read_text().splitlines()
        fields = lines[2].split(",")
        fields[4] = "oops"
        lines[2] = ",".join(fields)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataFormatError, match=r"spectra.csv:3:5"):
            read_spectra_csv(path)

    def test_wrong_field_count_reports_line(self, tmp_path):
        path = tmp_path / "spectra.csv"
        write_spectra_csv(path, self._spectra())
        lines = path.read_text().splitlines()
        lines[3] = lines[3] + ",0.0"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataFormatError, match=r"spectra.csv:4:1.*expected 624"):
            read_spectra_csv(path)

    def test_unknown_class_rejected(self, tmp_path):
        path = tmp_path / "spectra.csv"
        write_spectra_csv(path, self._spectra())
        text = path.read_text().replace("acetone", "krypton")
        path.write_text(text)
        with pytest.raises(DataFormatError, match="krypton"):
            read_spectra_csv(path)


class TestTemplateJson:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "template.json"
        t = default_template()
        save_template_json(path, t)
        loaded = load_template_json(path)
        assert loaded.baseline_amplitude == t.baseline_amplitude
        assert loaded.noise_sigma == t.noise_sigma
        assert loaded.peaks == t.peaks

    def test_version_check(self, tmp_path):
        path = tmp_path / "template.json"
        path.write_text('{"format_version": 99}\n')
        with pytest.raises(DataFormatError, match="version"):
            load_template_json(path)

    def test_bad_json_reports_position(self, tmp_path):
        path = tmp_path / "template.json"
        path.write_text("{not json")
        with pytest.raises(DataFormatError, match="template.json"):
            load_template_json(path)
