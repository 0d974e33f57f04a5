import pytest

from hybridssd import (AuditError, FlashGeometry, GeometryError, LatencyModel,
                       Mode, PageStateError, SsdState, desk_geometry)
from hybridssd.ssd import PAGE_FREE, PAGE_INVALID


class TestGeometry:
    def test_defaults(self):
        g = FlashGeometry()
        assert g.channels == 32
        assert g.blocks_per_channel == 512
        assert g.pages_per_block_slc == 256
        assert g.pages_per_block_qlc == 1024   # 4x density
        assert g.page_size == 16384
        assert g.op_ratio == 0.125

    @pytest.mark.parametrize("kw", [
        dict(channels=0), dict(blocks_per_channel=0),
        dict(pages_per_block_slc=0), dict(page_size=0),
        dict(op_ratio=-0.1), dict(op_ratio=1.0),
    ])
    def test_invalid_geometry_rejected(self, kw):
        with pytest.raises(GeometryError):
            desk_geometry(**kw)

    def test_channel_of_round_robin(self):
        g = desk_geometry(channels=4, blocks_per_channel=2)
        assert [g.channel_of(b) for b in range(8)] == [0, 1, 2, 3, 0, 1, 2, 3]


class TestLatencyModel:
    def test_default_flash_costs(self):
        lat = LatencyModel()
        assert lat.write_slc == 200.0
        assert lat.write_qlc == 2000.0
        assert lat.read_slc == 20.0
        assert lat.read_qlc == 140.0
        assert lat.erase_slc == 3000.0
        assert lat.erase_qlc == 3500.0

    def test_mode_lookup(self):
        lat = LatencyModel()
        assert lat.write_us(Mode.SLC) == 200.0
        assert lat.write_us(Mode.QLC) == 2000.0
        assert lat.read_us(Mode.QLC) == 140.0
        assert lat.erase_us(Mode.SLC) == 3000.0

    def test_qlc_must_cost_more_than_slc(self):
        with pytest.raises(GeometryError):
            LatencyModel(write_slc=2000.0, write_qlc=200.0)


class TestConstruction:
    def test_mode_split_rounds_to_nearest(self):
        g = desk_geometry()   # 8 blocks
        assert SsdState(g, LatencyModel(), 0.25).block_count(Mode.SLC) == 2
        assert SsdState(g, LatencyModel(), 0.5).block_count(Mode.SLC) == 4
        # 0.3 * 8 = 2.4 -> 2; 0.35 * 8 = 2.8 -> 3
        assert SsdState(g, LatencyModel(), 0.3).block_count(Mode.SLC) == 2
        assert SsdState(g, LatencyModel(), 0.35).block_count(Mode.SLC) == 3

    def test_slc_blocks_take_lowest_ids(self):
        ssd = SsdState(desk_geometry(), LatencyModel(), 0.5)
        modes = [b.mode for b in ssd.blocks]
        assert modes[:4] == [Mode.SLC] * 4
        assert modes[4:] == [Mode.QLC] * 4

    def test_logical_capacity_excludes_op(self):
        # 4 SLC * 8 + 4 QLC * 32 = 160 raw pages; 160 * 0.875 = 140
        ssd = SsdState(desk_geometry(), LatencyModel(), 0.5)
        assert ssd.logical_capacity_pages == 140

    def test_logical_capacity_frozen_across_conversion(self):
        ssd = SsdState(desk_geometry(), LatencyModel(), 0.5)
        before = ssd.logical_capacity_pages
        ssd.convert_block_mode(0, Mode.QLC)
        assert ssd.logical_capacity_pages == before


class TestPageOps:
    def test_program_read_roundtrip(self, desk_ssd):
        us = desk_ssd.program_page(0, 0, lpn=7, tag="x")
        assert us == 200.0
        assert desk_ssd.mapping[7] == (0, 0)
        assert desk_ssd.read_page(0, 0) == 20.0
        assert desk_ssd.payload_of(7) == "x"

    def test_program_enforces_append_order(self, desk_ssd):
        with pytest.raises(PageStateError):
            desk_ssd.program_page(0, 3, lpn=1)   # write pointer is at 0

    def test_program_rejects_double_mapping(self, desk_ssd):
        desk_ssd.program_page(0, 0, lpn=1)
        with pytest.raises(PageStateError):
            desk_ssd.program_page(0, 1, lpn=1)   # lpn 1 already mapped

    def test_read_free_or_invalid_page_raises(self, desk_ssd):
        with pytest.raises(PageStateError):
            desk_ssd.read_page(0, 0)
        desk_ssd.program_page(0, 0, lpn=1)
        desk_ssd.invalidate_page(0, 0)
        with pytest.raises(PageStateError):
            desk_ssd.read_page(0, 0)

    def test_invalidate_clears_mapping(self, desk_ssd):
        desk_ssd.program_page(0, 0, lpn=9)
        desk_ssd.invalidate_page(0, 0)
        assert 9 not in desk_ssd.mapping
        assert desk_ssd.blocks[0].pages[0] == PAGE_INVALID
        assert desk_ssd.blocks[0].valid_count == 0
        assert desk_ssd.blocks[0].invalid_count == 1

    def test_erase_requires_no_valid_pages(self, desk_ssd):
        desk_ssd.program_page(0, 0, lpn=1)
        with pytest.raises(PageStateError):
            desk_ssd.erase_block(0)
        desk_ssd.invalidate_page(0, 0)
        us = desk_ssd.erase_block(0)
        assert us == 3000.0
        b = desk_ssd.blocks[0]
        assert b.write_pointer == 0
        assert b.erase_count == 1
        assert all(p == PAGE_FREE for p in b.pages)

    def test_device_write_counter(self, desk_ssd):
        desk_ssd.program_page(0, 0, lpn=1)
        desk_ssd.program_page(0, 1, lpn=2)
        assert desk_ssd.device_pages_written == 2


class TestConversion:
    def test_convert_resizes_page_array(self, desk_ssd):
        assert len(desk_ssd.blocks[0].pages) == 8
        desk_ssd.convert_block_mode(0, Mode.QLC)
        b = desk_ssd.blocks[0]
        assert b.mode is Mode.QLC
        assert len(b.pages) == 32
        desk_ssd.convert_block_mode(0, Mode.SLC)
        assert len(desk_ssd.blocks[0].pages) == 8

    def test_convert_only_fully_free_blocks(self, desk_ssd):
        desk_ssd.program_page(0, 0, lpn=1)
        with pytest.raises(PageStateError):
            desk_ssd.convert_block_mode(0, Mode.QLC)
        desk_ssd.invalidate_page(0, 0)
        with pytest.raises(PageStateError):
            desk_ssd.convert_block_mode(0, Mode.QLC)  # invalid != free

    def test_convert_costs_nothing(self, desk_ssd):
        erases = desk_ssd.erase_ops
        writes = desk_ssd.device_pages_written
        desk_ssd.convert_block_mode(0, Mode.QLC)
        assert desk_ssd.erase_ops == erases
        assert desk_ssd.device_pages_written == writes
        assert desk_ssd.blocks[0].erase_count == 0


class TestAudit:
    def test_clean_state_passes(self, desk_ssd):
        desk_ssd.program_page(0, 0, lpn=1)
        desk_ssd.program_page(0, 1, lpn=2)
        desk_ssd.invalidate_page(0, 0)
        desk_ssd.audit()

    def test_mapping_corruption_detected(self, desk_ssd):
        desk_ssd.program_page(0, 0, lpn=1)
        desk_ssd.mapping[99] = (0, 5)          # points at a free page
        with pytest.raises(AuditError):
            desk_ssd.audit()

    def test_counter_corruption_detected(self, desk_ssd):
        desk_ssd.program_page(0, 0, lpn=1)
        desk_ssd.blocks[0].valid_count = 7
        with pytest.raises(AuditError):
            desk_ssd.audit()

    def test_write_pointer_discontinuity_detected(self, desk_ssd):
        desk_ssd.program_page(0, 0, lpn=1)
        desk_ssd.blocks[0].pages[3] = 42       # page beyond the pointer
        desk_ssd.mapping[42] = (0, 3)
        with pytest.raises(AuditError):
            desk_ssd.audit()
