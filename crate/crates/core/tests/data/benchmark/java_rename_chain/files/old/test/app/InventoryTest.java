package app;

import static org.junit.jupiter.api.Assertions.assertEquals;

import org.junit.jupiter.api.Test;

class InventoryTest {
    @Test
    void emptyInventoryHasNoItems() {
        Inventory inv = new Inventory();
        assertEquals(0, inv.countItems());
    }

    @Test
    void addingIncreasesQuantity() {
        Inventory inv = new Inventory();
        inv.add(new Item("bolt", 3));
        assertEquals(3, inv.totalQuantity());
    }
}
