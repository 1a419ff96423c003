"""Event parsing, serialization round trips, binning, and rendering."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tscformer.errors import OrderingError, ParseError, ValidationError
from tscformer.events import (
    EventPoint,
    EventStream,
    bin_events,
    parse_events,
    render_event_frames,
    serialize_events,
)
from tscformer.tensor import Tensor


def make_stream(triples, width=8, height=8):
    return EventStream([EventPoint(*t) for t in triples], width, height)


class TestParseCsv:
    def test_empty_file(self):
        stream = parse_events(b"", "csv")
        assert len(stream) == 0

    def test_two_rows(self):
        stream = parse_events(b"3,4,100,1\n3,4,200,-1", "csv")
        assert len(stream) == 2
        assert [e.t for e in stream] == [100, 200]
        assert stream.points[0] == EventPoint(3, 4, 100, 1)

    def test_header_skipped(self):
        stream = parse_events(b"x,y,t,p\n1,2,50,1\n", "csv")
        assert len(stream) == 1

    def test_malformed_row_names_line(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_events(b"1,2,3,1\n1,2,oops,1\n", "csv")

    def test_wrong_field_count(self):
        with pytest.raises(ParseError, match="line 1"):
            parse_events(b"1,2,3\n", "csv")

    def test_out_of_bounds_with_explicit_size(self):
        with pytest.raises(ValidationError):
            parse_events(b"9,0,1,1\n", "csv", width=4, height=4)

    def test_decreasing_timestamps(self):
        with pytest.raises(OrderingError, match="line 2"):
            parse_events(b"0,0,100,1\n0,0,50,1\n", "csv")

    def test_bad_polarity(self):
        with pytest.raises(ValidationError):
            parse_events(b"0,0,1,0\n", "csv")

    def test_inferred_size(self):
        stream = parse_events(b"3,5,1,1\n", "csv")
        assert (stream.width, stream.height) == (4, 6)


events_strategy = st.lists(
    st.tuples(
        st.integers(0, 15),
        st.integers(0, 11),
        st.integers(0, 10**9),
        st.sampled_from([1, -1]),
    ),
    max_size=50,
)


class TestEvbin:
    def test_empty_round_trip(self):
        stream = make_stream([], width=16, height=12)
        assert parse_events(serialize_events(stream), "evbin") == stream

    @given(events_strategy)
    def test_round_trip_bit_exact(self, quads):
        quads.sort(key=lambda q: q[2])
        stream = EventStream([EventPoint(x, y, t, p) for x, y, t, p in quads], 16, 12)
        data = serialize_events(stream)
        back = parse_events(data, "evbin")
        assert back == stream
        assert serialize_events(back) == data

    def test_bad_magic(self):
        with pytest.raises(ParseError):
            parse_events(b"XXXX" + bytes(12), "evbin")

    def test_truncated(self):
        stream = make_stream([(1, 1, 5, 1)])
        with pytest.raises(ParseError):
            parse_events(serialize_events(stream)[:-1], "evbin")

    def test_unknown_format(self):
        with pytest.raises(ValidationError):
            parse_events(b"", "aedat4")


class TestStreamInvariants:
    def test_rejects_decreasing(self):
        with pytest.raises(OrderingError):
            make_stream([(0, 0, 10, 1), (0, 0, 5, 1)])

    def test_rejects_out_of_bounds(self):
        with pytest.raises(ValidationError):
            make_stream([(8, 0, 1, 1)], width=8)

    def test_rejects_bad_polarity(self):
        with pytest.raises(ValidationError):
            make_stream([(0, 0, 1, 2)])


class TestBinEvents:
    def test_empty_stream(self):
        out = bin_events(make_stream([]), [0, 100], 8, 8)
        assert out.shape == (2, 2, 8, 8)
        assert np.all(out.data == 0.0)

    def test_single_event_placement(self):
        stream = make_stream([(1, 2, 150, 1)])
        out = bin_events(stream, [100, 200], 8, 8)
        assert out.data.sum() == 1.0
        assert out.data[0, 0, 2, 1] == 1.0

    def test_negative_polarity_channel(self):
        stream = make_stream([(3, 3, 10, -1)])
        out = bin_events(stream, [0], 8, 8)
        assert out.data[0, 1, 3, 3] == 1.0

    def test_unsorted_frame_times(self):
        with pytest.raises(ValidationError):
            bin_events(make_stream([]), [100, 50], 8, 8)

    def test_rescale_conserves(self):
        stream = make_stream([(7, 7, 5, 1), (0, 0, 6, -1)], width=8, height=8)
        out = bin_events(stream, [0], 4, 4)
        assert out.data.sum() == 2.0
        assert out.data[0, 0, 3, 3] == 1.0
        assert out.data[0, 1, 0, 0] == 1.0

    @given(st.integers(0, 2**32 - 1))
    def test_conservation_and_partition(self, seed):
        g = np.random.default_rng(seed)
        n = int(g.integers(0, 200))
        ts = np.sort(g.integers(0, 10_000, size=n))
        quads = [
            (int(g.integers(0, 8)), int(g.integers(0, 8)), int(t), int(g.choice([1, -1])))
            for t in ts
        ]
        stream = make_stream(quads)
        frame_times = sorted(set(int(v) for v in g.integers(0, 10_000, size=4)))
        if not frame_times:
            frame_times = [0]
        out = bin_events(stream, frame_times, 8, 8)
        in_window = sum(1 for q in quads if q[2] >= frame_times[0])
        assert out.data.sum() == in_window
        # partition: each in-window event lands in exactly the window holding its t
        for x, y, t, p in quads:
            if t < frame_times[0]:
                continue
            hits = [
                i
                for i in range(len(frame_times))
                if t >= frame_times[i]
                and (i + 1 == len(frame_times) or t < frame_times[i + 1])
            ]
            assert len(hits) == 1

    def test_ten_thousand_events_count(self):
        g = np.random.default_rng(99)
        ts = np.sort(g.integers(0, 100_000, size=10_000))
        quads = [
            (int(g.integers(0, 16)), int(g.integers(0, 12)), int(t), int(g.choice([1, -1])))
            for t in ts
        ]
        stream = EventStream([EventPoint(*q) for q in quads], 16, 12)
        frame_times = [10_000, 40_000, 70_000]
        out = bin_events(stream, frame_times, 6, 6)
        expect = sum(1 for q in quads if q[2] >= 10_000)
        assert out.data.sum() == expect


class TestRenderFrames:
    def test_zero_counts(self):
        out = render_event_frames(Tensor(np.zeros((2, 2, 4, 4))))
        assert out.shape == (2, 3, 4, 4)
        assert np.all(out.data == 0.0)

    def test_saturation(self):
        counts = np.zeros((1, 2, 4, 4))
        counts[0, 0, 1, 2] = 3.0
        out = render_event_frames(Tensor(counts))
        assert out.data[0, 0, 1, 2] == 1.0
        assert np.all(out.data[0, 1] == 0.0)

    def test_active_pixel_count(self):
        g = np.random.default_rng(3)
        counts = g.integers(0, 3, size=(3, 2, 5, 5)).astype(float)
        out = render_event_frames(Tensor(counts))
        active = (counts[:, 0] > 0).sum() + (counts[:, 1] > 0).sum()
        assert out.data[:, 0].sum() + out.data[:, 2].sum() == active
        assert set(np.unique(out.data)) <= {0.0, 1.0}

    def test_negative_counts_rejected(self):
        with pytest.raises(ValidationError):
            render_event_frames(Tensor(np.full((1, 2, 2, 2), -1.0)))
